#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "aesmpfp/adam.hpp"
#include "aesmpfp/checkpoint.hpp"
#include "aesmpfp/gradcheck.hpp"
#include "aesmpfp/nn.hpp"

using namespace aesmpfp;

namespace {

Tensor random_tensor(std::vector<size_t> dims, RngStream& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(dims));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Param make_param(const std::string& name, std::vector<size_t> dims, RngStream& rng,
                 double lo = -1.0, double hi = 1.0) {
  return Param(name, random_tensor(std::move(dims), rng, lo, hi));
}

// Reference three-loop matrix product, the oracle for the gemm kernels.
void naive_matmul(const Tensor& a, const Tensor& b, Tensor& c) {
  for (size_t i = 0; i < a.rows(); ++i)
    for (size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (size_t p = 0; p < a.cols(); ++p) acc += a.at2(i, p) * b.at2(p, j);
      c.at2(i, j) += acc;
    }
}

}  // namespace

TEST(Tensor, RejectsRankAboveThree) {
  EXPECT_THROW(Tensor({2, 2, 2, 2}), ShapeMismatch);
}

TEST(Tensor, GemmVariantsMatchNaiveProduct) {
  RngStream rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t m = 1 + rng.uniform_index(12);
    const size_t k = 1 + rng.uniform_index(12);
    const size_t n = 1 + rng.uniform_index(12);
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    Tensor want({m, n});
    naive_matmul(a, b, want);

    Tensor got_nn({m, n});
    gemm_nn(a.data(), b.data(), got_nn.data(), m, k, n);

    // B stored transposed: feed b^T to gemm_nt.
    Tensor bt({n, k});
    for (size_t i = 0; i < k; ++i)
      for (size_t j = 0; j < n; ++j) bt.at2(j, i) = b.at2(i, j);
    Tensor got_nt({m, n});
    gemm_nt(a.data(), bt.data(), got_nt.data(), m, k, n);

    // A stored transposed: feed a^T to gemm_tn.
    Tensor at({k, m});
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < k; ++j) at.at2(j, i) = a.at2(i, j);
    Tensor got_tn({m, n});
    gemm_tn(at.data(), b.data(), got_tn.data(), m, k, n);

    for (size_t i = 0; i < want.numel(); ++i) {
      EXPECT_NEAR(got_nn[i], want[i], 1e-12);
      EXPECT_NEAR(got_nt[i], want[i], 1e-12);
      EXPECT_NEAR(got_tn[i], want[i], 1e-12);
    }
  }
}

TEST(Rng, StreamsAreDeterministicAndIndependent) {
  RngStream a(42), b(42), c(derive_seed(42, 1));
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.next_u64(), b.next_u64());
    const double u = c.uniform01();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  EXPECT_NE(derive_seed(42, 1), derive_seed(42, 2));
}

TEST(Rng, NormalMomentsReasonable) {
  RngStream rng(7);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(TapeForward, DenseIdentityPassesInputThrough) {
  RngStream rng(3);
  Param w("w", Tensor::from({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}));
  Param b("b", Tensor::zeros({4}));
  Tensor x = random_tensor({3, 4}, rng);
  Tape t;
  Var y = t.linear(t.constant(x), t.param(w), t.param(b));
  for (size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(t.value(y)[i], x[i]);
}

TEST(TapeForward, KlOfIdenticalGaussiansIsZero) {
  RngStream rng(5);
  Param mu("mu", random_tensor({2, 6}, rng));
  Param sig("sig", random_tensor({2, 6}, rng, 0.3, 2.0));
  Tape t;
  Var kl = t.kl_diag(t.param(mu), t.param(sig), t.param(mu), t.param(sig));
  for (size_t i = 0; i < t.value(kl).numel(); ++i)
    EXPECT_NEAR(t.value(kl)[i], 0.0, 1e-14);
}

TEST(TapeForward, KlIsNonNegative) {
  RngStream rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    Param m1("m1", random_tensor({1, 8}, rng, -2, 2));
    Param s1("s1", random_tensor({1, 8}, rng, 0.2, 3.0));
    Param m2("m2", random_tensor({1, 8}, rng, -2, 2));
    Param s2("s2", random_tensor({1, 8}, rng, 0.2, 3.0));
    Tape t;
    Var kl = t.kl_diag(t.param(m1), t.param(s1), t.param(m2), t.param(s2));
    for (size_t i = 0; i < t.value(kl).numel(); ++i) EXPECT_GE(t.value(kl)[i], -1e-14);
  }
}

TEST(TapeForward, PoolThenUpsampleIsIdentityOnBlockConstantMaps) {
  RngStream rng(8);
  const size_t side = 6, block = 3, small = side / block;
  Tensor coarse = random_tensor({2, small * small}, rng);
  Tape t;
  Var up = t.upsample(t.constant(coarse), small, block);
  Var back = t.avg_pool(up, side, block);
  for (size_t i = 0; i < coarse.numel(); ++i)
    EXPECT_NEAR(t.value(back)[i], coarse[i], 1e-14);
}

TEST(TapeForward, AvgPoolHandExample) {
  Tensor x = Tensor::from({1, 16}, {1, 1, 2, 2,   //
                                    1, 1, 2, 2,   //
                                    3, 3, 4, 4,   //
                                    3, 3, 4, 4});
  Tape t;
  Var y = t.avg_pool(t.constant(x), 4, 2);
  ASSERT_EQ(t.value(y).numel(), 4u);
  EXPECT_DOUBLE_EQ(t.value(y)[0], 1.0);
  EXPECT_DOUBLE_EQ(t.value(y)[1], 2.0);
  EXPECT_DOUBLE_EQ(t.value(y)[2], 3.0);
  EXPECT_DOUBLE_EQ(t.value(y)[3], 4.0);
}

// ---------------------------------------------------------------------------
// Gradient checks: every differentiable op against central finite differences.
// ---------------------------------------------------------------------------

namespace {

constexpr double kGradTol = 1e-4;

template <typename F>
void expect_gradcheck(std::vector<Param*> params, F&& fn, double tol = kGradTol) {
  const double worst = gradcheck_max_rel_err(params, fn);
  EXPECT_LT(worst, tol);
}

}  // namespace

TEST(GradCheck, ElementwiseUnaryOps) {
  RngStream rng(101);
  for (int trial = 0; trial < 10; ++trial) {
    Param x("x", random_tensor({2, 5}, rng, -2.0, 2.0));
    expect_gradcheck({&x}, [&](Tape& t) { return t.mean_all(t.tanh(t.param(x))); });
    expect_gradcheck({&x}, [&](Tape& t) { return t.mean_all(t.sigmoid(t.param(x))); });
    expect_gradcheck({&x}, [&](Tape& t) { return t.mean_all(t.softplus(t.param(x))); });
    expect_gradcheck({&x}, [&](Tape& t) { return t.mean_all(t.exp(t.param(x))); });
    expect_gradcheck({&x}, [&](Tape& t) { return t.mean_all(t.square(t.param(x))); });
    expect_gradcheck({&x},
                     [&](Tape& t) { return t.sum_all(t.affine_const(t.param(x), 1.7, -0.3)); });
    expect_gradcheck({&x}, [&](Tape& t) { return t.sum_all(t.scale(t.param(x), -2.5)); });

    Param pos("pos", random_tensor({2, 5}, rng, 0.5, 2.0));
    expect_gradcheck({&pos}, [&](Tape& t) { return t.mean_all(t.log(t.param(pos))); });
  }
}

TEST(GradCheck, KinkedOpsAwayFromKink) {
  RngStream rng(102);
  for (int trial = 0; trial < 10; ++trial) {
    // Keep every coordinate at least 0.05 from the kink so the FD probe
    // cannot straddle it.
    Param x("x", Tensor::zeros({2, 6}));
    for (size_t i = 0; i < x.value.numel(); ++i) {
      double v = rng.uniform(0.05, 1.0);
      if (rng.uniform01() < 0.5) v = -v;
      x.value[i] = v;
    }
    expect_gradcheck({&x}, [&](Tape& t) { return t.sum_all(t.relu(t.param(x))); });
    expect_gradcheck({&x},
                     [&](Tape& t) { return t.sum_all(t.clamp_min(t.param(x), 0.0)); });

    Param a("a", random_tensor({2, 6}, rng, -1, 1));
    Param b("b", Tensor::zeros({2, 6}));
    for (size_t i = 0; i < b.value.numel(); ++i) {
      // Separate the two arguments so min() never switches branch under FD.
      const double gap = 0.05 + rng.uniform01();
      b.value[i] = a.value[i] + (rng.uniform01() < 0.5 ? gap : -gap);
    }
    expect_gradcheck({&a, &b}, [&](Tape& t) {
      return t.mean_all(t.minimum(t.param(a), t.param(b)));
    });
  }
}

TEST(GradCheck, BinaryAndShapeOps) {
  RngStream rng(103);
  for (int trial = 0; trial < 10; ++trial) {
    Param a("a", random_tensor({3, 4}, rng));
    Param b("b", random_tensor({3, 4}, rng));
    expect_gradcheck({&a, &b},
                     [&](Tape& t) { return t.mean_all(t.add(t.param(a), t.param(b))); });
    expect_gradcheck({&a, &b},
                     [&](Tape& t) { return t.mean_all(t.sub(t.param(a), t.param(b))); });
    expect_gradcheck({&a, &b},
                     [&](Tape& t) { return t.mean_all(t.mul(t.param(a), t.param(b))); });

    Tensor mask = random_tensor({3, 4}, rng, 0.0, 1.0);
    expect_gradcheck({&a}, [&](Tape& t) {
      return t.sum_all(t.mul_const(t.param(a), mask));
    });

    expect_gradcheck({&a, &b}, [&](Tape& t) {
      return t.mean_all(t.square(t.concat_cols(t.param(a), t.param(b))));
    });
    expect_gradcheck({&a}, [&](Tape& t) {
      return t.mean_all(t.slice_cols(t.param(a), 1, 3));
    });
    expect_gradcheck({&a}, [&](Tape& t) {
      return t.mean_all(t.square(t.row_sum(t.param(a))));
    });
    expect_gradcheck({&a}, [&](Tape& t) {
      return t.mean_all(t.square(t.col_mean(t.param(a))));
    });

    Param s("s", random_tensor({1}, rng, 0.2, 1.5));
    expect_gradcheck({&a, &s}, [&](Tape& t) {
      return t.mean_all(t.scale_by_var(t.param(a), t.param(s)));
    });
  }
}

TEST(GradCheck, LinearAndMatmul) {
  RngStream rng(104);
  for (int trial = 0; trial < 10; ++trial) {
    Param x("x", random_tensor({4, 3}, rng));
    Param w("w", random_tensor({5, 3}, rng));
    Param b("b", random_tensor({5}, rng));
    expect_gradcheck({&x, &w, &b}, [&](Tape& t) {
      return t.mean_all(t.square(t.linear(t.param(x), t.param(w), t.param(b))));
    });
    expect_gradcheck({&x, &w}, [&](Tape& t) {
      return t.mean_all(t.square(t.matmul_nt(t.param(x), t.param(w))));
    });
  }
}

TEST(GradCheck, PoolingOps) {
  RngStream rng(105);
  for (int trial = 0; trial < 10; ++trial) {
    Param x("x", random_tensor({2, 36}, rng));
    expect_gradcheck({&x}, [&](Tape& t) {
      return t.mean_all(t.square(t.avg_pool(t.param(x), 6, 3)));
    });
    Param s("s", random_tensor({2, 4}, rng));
    expect_gradcheck({&s}, [&](Tape& t) {
      return t.mean_all(t.square(t.upsample(t.param(s), 2, 3)));
    });
  }
}

TEST(GradCheck, LossOps) {
  RngStream rng(106);
  for (int trial = 0; trial < 10; ++trial) {
    Param logits("logits", random_tensor({3, 7}, rng, -3, 3));
    Tensor targets = random_tensor({3, 7}, rng, 0.0, 1.0);
    expect_gradcheck({&logits}, [&](Tape& t) {
      return t.mean_all(t.bce_logits(t.param(logits), targets));
    });

    Param pred("pred", random_tensor({3, 7}, rng));
    Tensor want = random_tensor({3, 7}, rng);
    expect_gradcheck({&pred}, [&](Tape& t) {
      return t.mean_all(t.mse(t.param(pred), want));
    });

    Param m1("m1", random_tensor({2, 5}, rng, -1, 1));
    Param s1("s1", random_tensor({2, 5}, rng, 0.4, 2.0));
    Param m2("m2", random_tensor({2, 5}, rng, -1, 1));
    Param s2("s2", random_tensor({2, 5}, rng, 0.4, 2.0));
    expect_gradcheck({&m1, &s1, &m2, &s2}, [&](Tape& t) {
      return t.mean_all(t.kl_diag(t.param(m1), t.param(s1), t.param(m2), t.param(s2)));
    });
  }
}

TEST(GradCheck, GruCellComposite) {
  RngStream rng(107);
  GruCell cell("gru", 4, 6, rng);
  Param x("x", random_tensor({3, 4}, rng));
  Param h("h", random_tensor({3, 6}, rng, -0.9, 0.9));
  std::vector<Param*> params{&x, &h};
  cell.collect(params);
  expect_gradcheck(params, [&](Tape& t) {
    return t.mean_all(t.square(cell(t, t.param(x), t.param(h))));
  });
}

TEST(GradCheck, GaussianSampleComposite) {
  RngStream rng(108);
  Param mu("mu", random_tensor({3, 5}, rng));
  Param sig("sig", random_tensor({3, 5}, rng, 0.3, 1.5));
  Tensor noise = make_normal({3, 5}, rng);
  expect_gradcheck({&mu, &sig}, [&](Tape& t) {
    return t.mean_all(t.square(gaussian_sample(t, t.param(mu), t.param(sig), noise)));
  });
}

// ---------------------------------------------------------------------------
// GRU semantics
// ---------------------------------------------------------------------------

TEST(Gru, ZeroStateZeroInputZeroWeightsIsFixedPoint) {
  RngStream rng(1);
  GruCell cell("gru", 3, 4, rng);
  for (Param* p : {&cell.wz, &cell.wr, &cell.wc, &cell.uz, &cell.ur, &cell.uc})
    p->value.fill(0.0);
  Tensor x = Tensor::zeros({2, 3});
  Tensor h = Tensor::zeros({2, 4});
  Tensor out = cell.forward(x, h);
  for (size_t i = 0; i < out.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], 0.0);
}

TEST(Gru, OutputsBoundedInOpenUnitInterval) {
  RngStream rng(2);
  GruCell cell("gru", 3, 4, rng);
  Tensor h = Tensor::zeros({1, 4});
  for (int step = 0; step < 50; ++step) {
    Tensor x = random_tensor({1, 3}, rng, -5.0, 5.0);
    h = cell.forward(x, h);
    for (size_t i = 0; i < h.numel(); ++i) {
      EXPECT_GT(h[i], -1.0);
      EXPECT_LT(h[i], 1.0);
    }
  }
}

TEST(Gru, TapedForwardMatchesFastForwardBitExact) {
  RngStream rng(9);
  GruCell cell("gru", 5, 7, rng);
  Tensor x = random_tensor({4, 5}, rng);
  Tensor h = random_tensor({4, 7}, rng, -0.9, 0.9);
  Tensor fast_out = cell.forward(x, h);
  Tape t;
  Var out = cell(t, t.constant(x), t.constant(h));
  for (size_t i = 0; i < fast_out.numel(); ++i)
    EXPECT_EQ(t.value(out)[i], fast_out[i]);
}

TEST(Mlp, TapedForwardMatchesFastForwardBitExact) {
  RngStream rng(10);
  Mlp net("mlp", 6, {8, 8}, 3, rng, Act::Relu);
  Tensor x = random_tensor({5, 6}, rng);
  Tensor fast_out = net.forward(x);
  Tape t;
  Var out = net(t, t.constant(x));
  for (size_t i = 0; i < fast_out.numel(); ++i)
    EXPECT_EQ(t.value(out)[i], fast_out[i]);
}

// ---------------------------------------------------------------------------
// Adam + schedule
// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  RngStream rng(21);
  Param p("p", random_tensor({3, 3}, rng));
  Tensor before = p.value;
  Adam opt({&p});
  opt.zero_grad();
  opt.step(1e-3);
  for (size_t i = 0; i < before.numel(); ++i) EXPECT_DOUBLE_EQ(p.value[i], before[i]);
}

TEST(Adam, FirstStepWithUnitGradientMovesByLr) {
  Param p("p", Tensor::from({1}, {0.5}));
  Adam opt({&p});
  opt.zero_grad();
  p.grad[0] = 1.0;
  opt.step(1e-4);
  // Bias-corrected first step: mhat = 1, vhat = 1, delta = lr / (1 + eps).
  EXPECT_NEAR(0.5 - p.value[0], 1e-4, 1e-9);
}

TEST(Adam, ThrowsOnNanGradient) {
  Param p("p", Tensor::from({1}, {0.5}));
  Adam opt({&p});
  p.grad[0] = std::nan("");
  EXPECT_THROW(opt.step(1e-4), NonFiniteValue);
}

TEST(LrSchedule, EndpointsAndMidpointExact) {
  EXPECT_DOUBLE_EQ(lr_schedule(0, 1000), 1e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(1000, 1000), 1e-6);
  EXPECT_NEAR(lr_schedule(500, 1000), 5.05e-5, 1e-12);
  EXPECT_DOUBLE_EQ(lr_schedule(0, 0), 1e-4);
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  RngStream rng(31);
  Param a("a", random_tensor({4, 3}, rng));
  Param b("b", random_tensor({7}, rng));
  Param c("c", random_tensor({2, 2, 2}, rng));
  std::vector<ParamBlock> blocks{{"net/alpha", {&a, &b}}, {"net/beta", {&c}}};

  const std::string p1 = "ckpt_roundtrip_1.bin";
  const std::string p2 = "ckpt_roundtrip_2.bin";
  save_checkpoint(p1, blocks);

  // Scramble, load back, save again.
  a.value.fill(0.0);
  b.value.fill(0.0);
  c.value.fill(0.0);
  load_checkpoint(p1, blocks);
  save_checkpoint(p2, blocks);

  EXPECT_EQ(slurp(p1), slurp(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST(Checkpoint, MismatchesAreRejected) {
  RngStream rng(32);
  Param a("a", random_tensor({4, 3}, rng));
  std::vector<ParamBlock> blocks{{"net/alpha", {&a}}};
  const std::string path = "ckpt_mismatch.bin";
  save_checkpoint(path, blocks);

  std::vector<ParamBlock> wrong_name{{"net/gamma", {&a}}};
  EXPECT_THROW(load_checkpoint(path, wrong_name), CheckpointError);

  Param small("a", Tensor::zeros({2, 2}));
  std::vector<ParamBlock> wrong_shape{{"net/alpha", {&small}}};
  EXPECT_THROW(load_checkpoint(path, wrong_shape), CheckpointError);

  EXPECT_THROW(load_checkpoint("does_not_exist.bin", blocks), CheckpointError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, ValuesSurviveRoundTripAtF32Precision) {
  RngStream rng(33);
  Param a("a", random_tensor({5, 5}, rng));
  Tensor original = a.value;
  std::vector<ParamBlock> blocks{{"net", {&a}}};
  const std::string path = "ckpt_precision.bin";
  save_checkpoint(path, blocks);
  a.value.fill(0.0);
  load_checkpoint(path, blocks);
  for (size_t i = 0; i < original.numel(); ++i)
    EXPECT_EQ(a.value[i], static_cast<double>(static_cast<float>(original[i])));
  std::filesystem::remove(path);
}
