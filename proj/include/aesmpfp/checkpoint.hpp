#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "tape.hpp"

namespace aesmpfp {

// Parameter checkpoint: little-endian binary, header {magic "AESM", version},
// then a sequence of named blocks; each block holds its parameter tensors in
// registration order as {rank, dims..., f32 data}.  Values are stored as f32,
// so save -> load -> save reproduces identical bytes.

struct ParamBlock {
  std::string name;
  std::vector<Param*> params;
};

namespace ckpt_detail {

constexpr uint32_t kMagic = 0x4D534541u;  // "AESM"
constexpr uint32_t kVersion = 1;

template <typename T>
void write_raw(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("checkpoint: truncated file");
  return v;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<ParamBlock>& blocks) {
  using namespace ckpt_detail;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("checkpoint: cannot open for write: " + path);
  write_raw<uint32_t>(os, kMagic);
  write_raw<uint32_t>(os, kVersion);
  write_raw<uint32_t>(os, static_cast<uint32_t>(blocks.size()));
  for (const ParamBlock& b : blocks) {
    write_raw<uint32_t>(os, static_cast<uint32_t>(b.name.size()));
    os.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    write_raw<uint32_t>(os, static_cast<uint32_t>(b.params.size()));
    for (const Param* p : b.params) {
      write_raw<uint32_t>(os, static_cast<uint32_t>(p->value.rank()));
      for (size_t d : p->value.dims()) write_raw<uint32_t>(os, static_cast<uint32_t>(d));
      for (size_t i = 0; i < p->value.numel(); ++i)
        write_raw<float>(os, static_cast<float>(p->value[i]));
    }
  }
  if (!os) throw CheckpointError("checkpoint: write failed: " + path);
}

inline void load_checkpoint(const std::string& path, std::vector<ParamBlock>& blocks) {
  using namespace ckpt_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open: " + path);
  if (read_raw<uint32_t>(is) != kMagic) throw CheckpointError("checkpoint: bad magic");
  if (read_raw<uint32_t>(is) != kVersion)
    throw CheckpointError("checkpoint: unsupported version");
  const uint32_t nblocks = read_raw<uint32_t>(is);
  if (nblocks != blocks.size()) throw CheckpointError("checkpoint: block count mismatch");
  for (ParamBlock& b : blocks) {
    const uint32_t nlen = read_raw<uint32_t>(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    if (!is || name != b.name)
      throw CheckpointError("checkpoint: expected block '" + b.name + "', found '" +
                            name + "'");
    const uint32_t nparams = read_raw<uint32_t>(is);
    if (nparams != b.params.size())
      throw CheckpointError("checkpoint: tensor count mismatch in " + b.name);
    for (Param* p : b.params) {
      const uint32_t rank = read_raw<uint32_t>(is);
      std::vector<size_t> dims(rank);
      for (uint32_t d = 0; d < rank; ++d) dims[d] = read_raw<uint32_t>(is);
      if (dims != p->value.dims())
        throw CheckpointError("checkpoint: shape mismatch in " + b.name);
      for (size_t i = 0; i < p->value.numel(); ++i)
        p->value[i] = static_cast<double>(read_raw<float>(is));
    }
  }
}

}  // namespace aesmpfp
