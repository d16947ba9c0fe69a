#include <cmath>
#include <vector>

#include "doctest.h"
#include "fd_check.hpp"
#include "tdcnet/nn.hpp"
#include "tdcnet/ops.hpp"

using namespace tdc;
using tdc::testing::fd_check;
using tdc::testing::rand_tensor;

TEST_SUITE("ops") {

TEST_CASE("conv2d matches a direct nested-loop reference") {
  Rng rng(10);
  Tensor x = rand_tensor({2, 3, 6, 7}, rng);
  Tensor w = rand_tensor({4, 3, 3, 3}, rng);
  Tensor b = rand_tensor({4}, rng);
  int stride = 2, pad = 1;
  Tensor y = conv2d(x, w, b, stride, pad);
  int ho = (6 + 2 * pad - 3) / stride + 1;
  int wo = (7 + 2 * pad - 3) / stride + 1;
  REQUIRE(y.shape() == Shape{2, 4, ho, wo});
  for (int n = 0; n < 2; ++n)
    for (int co = 0; co < 4; ++co)
      for (int oi = 0; oi < ho; ++oi)
        for (int oj = 0; oj < wo; ++oj) {
          double acc = b.data()[co];
          for (int ci = 0; ci < 3; ++ci)
            for (int di = 0; di < 3; ++di)
              for (int dj = 0; dj < 3; ++dj) {
                int ii = oi * stride - pad + di;
                int jj = oj * stride - pad + dj;
                if (ii < 0 || ii >= 6 || jj < 0 || jj >= 7) continue;
                acc += x.data()[((n * 3 + ci) * 6 + ii) * 7 + jj] *
                       w.data()[((co * 3 + ci) * 3 + di) * 3 + dj];
              }
          CHECK(y.data()[((n * 4 + co) * ho + oi) * wo + oj] ==
                doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("conv2d gradients") {
  Rng rng(11);
  SUBCASE("3x3 stride 1 pad 1") {
    Tensor x = rand_tensor({1, 2, 5, 5}, rng);
    Tensor w = rand_tensor({3, 2, 3, 3}, rng);
    Tensor b = rand_tensor({3}, rng);
    fd_check({x, w, b},
             [](auto& in) { return conv2d(in[0], in[1], in[2], 1, 1); });
  }
  SUBCASE("3x3 stride 2, no bias") {
    Tensor x = rand_tensor({2, 2, 6, 6}, rng);
    Tensor w = rand_tensor({4, 2, 3, 3}, rng);
    fd_check({x, w},
             [](auto& in) { return conv2d(in[0], in[1], Tensor(), 2, 1); });
  }
  SUBCASE("1x1 fast path") {
    Tensor x = rand_tensor({2, 4, 3, 3}, rng);
    Tensor w = rand_tensor({2, 4, 1, 1}, rng);
    Tensor b = rand_tensor({2}, rng);
    fd_check({x, w, b},
             [](auto& in) { return conv2d(in[0], in[1], in[2], 1, 0); });
  }
  SUBCASE("grouped, one channel pair per group") {
    Tensor x = rand_tensor({1, 8, 5, 5}, rng);
    Tensor w = rand_tensor({4, 2, 3, 3}, rng);
    fd_check({x, w}, [](auto& in) {
      return conv2d(in[0], in[1], Tensor(), 1, 1, 4);
    });
  }
  SUBCASE("7x7 stride 2 pad 3 stem shape") {
    Tensor x = rand_tensor({1, 2, 9, 9}, rng);
    Tensor w = rand_tensor({2, 2, 7, 7}, rng);
    fd_check({x, w},
             [](auto& in) { return conv2d(in[0], in[1], Tensor(), 2, 3); });
  }
}

TEST_CASE("conv2d rejects bad geometry") {
  Tensor x = Tensor::zeros({1, 3, 4, 4});
  Tensor w = Tensor::zeros({2, 4, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, Tensor(), 1, 1), ShapeError);
  Tensor w2 = Tensor::zeros({2, 3, 9, 9});
  CHECK_THROWS_AS(conv2d(x, w2, Tensor(), 1, 1), ShapeError);
}

TEST_CASE("adaptive_avg_pool2d") {
  SUBCASE("global 1x1 equals plain mean") {
    Rng rng(12);
    Tensor x = rand_tensor({2, 3, 4, 5}, rng);
    Tensor y = adaptive_avg_pool2d(x, 1, 1);
    REQUIRE(y.shape() == Shape{2, 3, 1, 1});
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = 0; i < 20; ++i) acc += x.data()[(n * 3 + c) * 20 + i];
        CHECK(y.data()[n * 3 + c] == doctest::Approx(acc / 20.0));
      }
    fd_check({x}, [](auto& in) { return adaptive_avg_pool2d(in[0], 1, 1); });
  }
  SUBCASE("exact halving") {
    Rng rng(13);
    Tensor x = rand_tensor({1, 2, 4, 6}, rng);
    Tensor y = adaptive_avg_pool2d(x, 2, 3);
    CHECK(y.data()[0] ==
          doctest::Approx((x.data()[0] + x.data()[1] + x.data()[6] + x.data()[7]) / 4.0));
    fd_check({x}, [](auto& in) { return adaptive_avg_pool2d(in[0], 2, 3); });
  }
  SUBCASE("uneven bins") {
    Rng rng(14);
    Tensor x = rand_tensor({1, 1, 5, 7}, rng);
    fd_check({x}, [](auto& in) { return adaptive_avg_pool2d(in[0], 2, 3); });
  }
}

TEST_CASE("bilinear_upsample") {
  SUBCASE("constant input stays constant") {
    Tensor x = Tensor::full({1, 2, 3, 3}, 4.25);
    Tensor y = bilinear_upsample(x, 6, 6);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(4.25));
  }
  SUBCASE("2x doubling gradient") {
    Rng rng(15);
    Tensor x = rand_tensor({2, 2, 3, 4}, rng);
    fd_check({x}, [](auto& in) { return bilinear_upsample(in[0], 6, 8); });
  }
  SUBCASE("sampling positions follow half-pixel centers") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {0.0, 1.0, 1.0, 0.0});
    Tensor y = bilinear_upsample(x, 4, 4);
    // output (1,1) samples source (0.25, 0.25):
    // 0*0.75*0.75 + 1*0.75*0.25 + 1*0.25*0.75 + 0*0.25*0.25
    CHECK(y.data()[5] == doctest::Approx(0.375));
    // corners clamp to the nearest source pixel
    CHECK(y.data()[0] == doctest::Approx(0.0));
    CHECK(y.data()[3] == doctest::Approx(1.0));
    CHECK(y.data()[12] == doctest::Approx(1.0));
    CHECK(y.data()[15] == doctest::Approx(0.0));
  }
}

TEST_CASE("batchnorm2d") {
  Rng rng(16);
  SUBCASE("training normalizes batch statistics") {
    Tensor x = rand_tensor({4, 3, 5, 5}, rng, -2.0, 5.0);
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    std::vector<double> rm(3, 0.0), rv(3, 1.0);
    Tensor y = batchnorm2d(x, gamma, beta, rm, rv, true, 0.1, 1e-5);
    for (int c = 0; c < 3; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int n = 0; n < 4; ++n)
        for (int i = 0; i < 25; ++i) {
          double v = y.data()[(n * 3 + c) * 25 + i];
          s += v;
          s2 += v * v;
        }
      CHECK(s / 100.0 == doctest::Approx(0.0).epsilon(1e-9));
      CHECK(s2 / 100.0 == doctest::Approx(1.0).epsilon(1e-3));
    }
    CHECK(rm[0] != 0.0);  // running stats moved
  }
  SUBCASE("training gradients") {
    Tensor x = rand_tensor({2, 2, 3, 3}, rng);
    Tensor gamma = rand_tensor({2}, rng, 0.5, 1.5);
    Tensor beta = rand_tensor({2}, rng, -0.5, 0.5);
    std::vector<double> rm(2, 0.0), rv(2, 1.0);
    fd_check({x, gamma, beta}, [&](auto& in) {
      return batchnorm2d(in[0], in[1], in[2], rm, rv, true, 0.1, 1e-5);
    });
  }
  SUBCASE("eval uses running stats and its gradients") {
    Tensor x = rand_tensor({2, 2, 3, 3}, rng);
    Tensor gamma = rand_tensor({2}, rng, 0.5, 1.5);
    Tensor beta = rand_tensor({2}, rng, -0.5, 0.5);
    std::vector<double> rm = {0.3, -0.2}, rv = {1.4, 0.8};
    Tensor y = batchnorm2d(x, gamma, beta, rm, rv, false, 0.1, 1e-5);
    double expect = gamma.data()[0] * (x.data()[0] - 0.3) / std::sqrt(1.4 + 1e-5) +
                    beta.data()[0];
    CHECK(y.data()[0] == doctest::Approx(expect).epsilon(1e-12));
    fd_check({x, gamma, beta}, [&](auto& in) {
      return batchnorm2d(in[0], in[1], in[2], rm, rv, false, 0.1, 1e-5);
    });
  }
}

TEST_CASE("groupnorm") {
  Rng rng(17);
  Tensor x = rand_tensor({2, 4, 3, 3}, rng, -2.0, 3.0);
  Tensor gamma = rand_tensor({4}, rng, 0.5, 1.5);
  Tensor beta = rand_tensor({4}, rng, -0.5, 0.5);
  fd_check({x, gamma, beta}, [](auto& in) {
    return groupnorm(in[0], in[1], in[2], 2, 1e-5);
  });
  SUBCASE("normalizes each group") {
    Tensor g1 = Tensor::full({4}, 1.0);
    Tensor b0 = Tensor::zeros({4});
    Tensor y = groupnorm(x, g1, b0, 2, 1e-5);
    double s = 0.0;
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 9; ++i) s += y.data()[c * 9 + i];
    CHECK(s / 18.0 == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("layernorm_lastdim") {
  Rng rng(18);
  Tensor x = rand_tensor({2, 3, 8}, rng, -2.0, 4.0);
  Tensor gamma = rand_tensor({8}, rng, 0.5, 1.5);
  Tensor beta = rand_tensor({8}, rng, -0.5, 0.5);
  fd_check({x, gamma, beta}, [](auto& in) {
    return layernorm_lastdim(in[0], in[1], in[2], 1e-5);
  });
  SUBCASE("rows come out centered") {
    Tensor g1 = Tensor::full({8}, 1.0);
    Tensor b0 = Tensor::zeros({8});
    Tensor y = layernorm_lastdim(x, g1, b0, 1e-5);
    double s = 0.0;
    for (int i = 0; i < 8; ++i) s += y.data()[i];
    CHECK(s / 8.0 == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("softmax_lastdim") {
  Rng rng(19);
  Tensor x = rand_tensor({3, 4, 6}, rng, -3.0, 3.0);
  Tensor y = softmax_lastdim(x);
  for (int r = 0; r < 12; ++r) {
    double s = 0.0;
    for (int i = 0; i < 6; ++i) {
      double v = y.data()[r * 6 + i];
      CHECK(v > 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  fd_check({x}, [](auto& in) { return softmax_lastdim(in[0]); });
  SUBCASE("large logits stay finite") {
    Tensor big = Tensor::from_data({1, 3}, {1000.0, 999.0, -1000.0});
    Tensor sb = softmax_lastdim(big);
    CHECK(std::isfinite(sb.data()[0]));
    CHECK(sb.data()[0] > sb.data()[1]);
  }
}

TEST_CASE("roll2d") {
  Tensor x = Tensor::from_data({1, 2, 2, 1}, {1, 2, 3, 4});
  Tensor y = roll2d(x, 1, 0);
  CHECK(y.data()[0] == 3.0);
  CHECK(y.data()[1] == 4.0);
  CHECK(y.data()[2] == 1.0);
  CHECK(y.data()[3] == 2.0);
  SUBCASE("roundtrip restores the input") {
    Rng rng(20);
    Tensor z = rand_tensor({2, 4, 5, 3}, rng);
    Tensor back = roll2d(roll2d(z, 2, 3), -2, -3);
    for (int64_t i = 0; i < z.numel(); ++i) CHECK(back.data()[i] == z.data()[i]);
  }
  SUBCASE("gradients") {
    Rng rng(21);
    Tensor z = rand_tensor({1, 3, 4, 2}, rng);
    fd_check({z}, [](auto& in) { return roll2d(in[0], -1, 2); });
  }
}

TEST_CASE("gather_rows") {
  Tensor table = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  std::vector<int> idx = {2, 0, 2};
  Tensor y = gather_rows(table, idx);
  REQUIRE(y.shape() == Shape{3, 2});
  CHECK(y.data()[0] == 5.0);
  CHECK(y.data()[2] == 1.0);
  CHECK(y.data()[4] == 5.0);
  SUBCASE("repeated rows accumulate gradient") {
    Rng rng(22);
    Tensor t = rand_tensor({4, 3}, rng);
    std::vector<int> ix = {1, 1, 3, 0};
    fd_check({t}, [&](auto& in) { return gather_rows(in[0], ix); });
  }
}

TEST_CASE("window partition and reverse") {
  Rng rng(23);
  Tensor x = rand_tensor({2, 4, 6, 3}, rng);
  Tensor wp = window_partition(x, 2);
  REQUIRE(wp.shape() == Shape{2 * 2 * 3, 4, 3});
  Tensor back = window_reverse(wp, 2, 2, 4, 6);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
  SUBCASE("first window holds the top-left block") {
    // window 0 token 0 is x[0, 0, 0, :]; token 1 is x[0, 0, 1, :]
    CHECK(wp.data()[0] == x.data()[0]);
    CHECK(wp.data()[3] == x.data()[3]);
    // token 2 jumps to the second row of the window
    CHECK(wp.data()[6] == x.data()[6 * 3 + 0]);
  }
  SUBCASE("gradients flow through the roundtrip") {
    Tensor z = rand_tensor({1, 4, 4, 2}, rng);
    fd_check({z}, [](auto& in) {
      return window_reverse(window_partition(in[0], 2), 2, 1, 4, 4);
    });
  }
}

TEST_CASE("nchw/token conversions invert each other") {
  Rng rng(24);
  Tensor x = rand_tensor({2, 5, 3, 4}, rng);
  Tensor t = nchw_to_tokens(x);
  REQUIRE(t.shape() == Shape{2, 12, 5});
  Tensor back = tokens_to_nchw(t, 3, 4);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
}

TEST_CASE("make_shift_mask separates shifted regions") {
  int h = 8, w = 8, win = 4, shift = 2;
  Tensor mask = make_shift_mask(h, w, win, shift, -100.0);
  REQUIRE(mask.shape() == Shape{4, 16, 16});
  // the un-shifted top-left window sees no cross-region pairs
  for (int i = 0; i < 256; ++i) CHECK(mask.data()[i] == 0.0);
  // every diagonal entry is zero (a token always attends to itself)
  for (int wi = 0; wi < 4; ++wi)
    for (int t = 0; t < 16; ++t)
      CHECK(mask.data()[(wi * 16 + t) * 16 + t] == 0.0);
  // the bottom-right window mixes four regions, so it has blocked pairs
  bool any_blocked = false;
  for (int i = 0; i < 256; ++i)
    if (mask.data()[3 * 256 + i] == -100.0) any_blocked = true;
  CHECK(any_blocked);
  // mask entries are symmetric
  for (int wi = 0; wi < 4; ++wi)
    for (int a = 0; a < 16; ++a)
      for (int b = 0; b < 16; ++b)
        CHECK(mask.data()[(wi * 16 + a) * 16 + b] ==
              mask.data()[(wi * 16 + b) * 16 + a]);
}

TEST_CASE("relative_position_index is valid and center-symmetric") {
  int win = 3;
  auto idx = relative_position_index(win);
  int t = win * win;
  REQUIRE(static_cast<int>(idx.size()) == t * t);
  int maxv = (2 * win - 1) * (2 * win - 1);
  for (int v : idx) {
    CHECK(v >= 0);
    CHECK(v < maxv);
  }
  // zero offset maps to the table center for every token
  int center = (win - 1) * (2 * win - 1) + (win - 1);
  for (int i = 0; i < t; ++i) CHECK(idx[static_cast<size_t>(i * t + i)] == center);
  // same spatial offset gives the same index
  CHECK(idx[0 * t + 1] == idx[1 * t + 2]);
  CHECK(idx[0 * t + 3] == idx[3 * t + 6]);
}

TEST_CASE("channel max and mean") {
  Tensor x = Tensor::from_data({1, 3, 1, 2}, {1, 5, 9, 2, 4, 3});
  Tensor mx = channel_max(x);
  Tensor mn = channel_mean(x);
  REQUIRE(mx.shape() == Shape{1, 1, 1, 2});
  CHECK(mx.data()[0] == 9.0);
  CHECK(mx.data()[1] == 5.0);
  CHECK(mn.data()[0] == doctest::Approx((1 + 9 + 4) / 3.0));
  CHECK(mn.data()[1] == doctest::Approx((5 + 2 + 3) / 3.0));
  SUBCASE("gradients") {
    Rng rng(25);
    Tensor z = rand_tensor({2, 4, 3, 3}, rng);
    fd_check({z}, [](auto& in) { return channel_max(in[0]); });
    fd_check({z}, [](auto& in) { return channel_mean(in[0]); });
  }
}

TEST_CASE("channel_shuffle2 interleaves the two halves") {
  Tensor x = Tensor::from_data({1, 4, 1, 1}, {10, 11, 20, 21});
  Tensor y = channel_shuffle2(x);
  CHECK(y.data()[0] == 10.0);
  CHECK(y.data()[1] == 20.0);
  CHECK(y.data()[2] == 11.0);
  CHECK(y.data()[3] == 21.0);
  SUBCASE("gradients") {
    Rng rng(26);
    Tensor z = rand_tensor({2, 6, 2, 2}, rng);
    fd_check({z}, [](auto& in) { return channel_shuffle2(in[0]); });
  }
}

TEST_CASE("channel_duplicate2 repeats each channel adjacently") {
  Tensor x = Tensor::from_data({1, 2, 1, 2}, {1, 2, 3, 4});
  Tensor y = channel_duplicate2(x);
  REQUIRE(y.shape() == Shape{1, 4, 1, 2});
  CHECK(y.data()[0] == 1.0);
  CHECK(y.data()[1] == 2.0);
  CHECK(y.data()[2] == 1.0);
  CHECK(y.data()[3] == 2.0);
  CHECK(y.data()[4] == 3.0);
  CHECK(y.data()[6] == 3.0);
  SUBCASE("gradients") {
    Rng rng(27);
    Tensor z = rand_tensor({2, 3, 2, 2}, rng);
    fd_check({z}, [](auto& in) { return channel_duplicate2(in[0]); });
  }
}

TEST_CASE("spatial_gradients") {
  SUBCASE("linear ramp has unit slope everywhere") {
    int h = 4, w = 5;
    Tensor x = Tensor::empty({1, 1, h, w});
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) x.data()[i * w + j] = 2.0 * j + 3.0 * i;
    auto [dx, dy] = spatial_gradients(x);
    for (int64_t i = 0; i < dx.numel(); ++i) {
      CHECK(dx.data()[i] == doctest::Approx(2.0));
      CHECK(dy.data()[i] == doctest::Approx(3.0));
    }
  }
  SUBCASE("gradients of the gradients") {
    Rng rng(28);
    Tensor z = rand_tensor({2, 1, 4, 5}, rng);
    fd_check({z}, [](auto& in) { return spatial_gradients(in[0]).first; });
    fd_check({z}, [](auto& in) { return spatial_gradients(in[0]).second; });
  }
}

TEST_CASE("normals_from_depth") {
  SUBCASE("flat depth gives the up normal") {
    Tensor d = Tensor::full({2, 1, 6, 7}, 3.7);
    Tensor n = normals_from_depth(d);
    REQUIRE(n.shape() == Shape{2, 3, 6, 7});
    int64_t hw = 42;
    for (int b = 0; b < 2; ++b)
      for (int64_t i = 0; i < hw; ++i) {
        CHECK(std::abs(n.data()[b * 3 * hw + i]) < 1e-6);
        CHECK(std::abs(n.data()[b * 3 * hw + hw + i]) < 1e-6);
        CHECK(std::abs(n.data()[b * 3 * hw + 2 * hw + i] - 1.0) < 1e-6);
      }
  }
  SUBCASE("adding a constant offset leaves normals unchanged") {
    Rng rng(29);
    Tensor d = tdc::testing::rand_tensor({1, 1, 5, 6}, rng, 0.5, 2.0);
    Tensor d2 = add_scalar(d, 17.25);
    Tensor n1 = normals_from_depth(d);
    Tensor n2 = normals_from_depth(d2);
    for (int64_t i = 0; i < n1.numel(); ++i)
      CHECK(std::abs(n1.data()[i] - n2.data()[i]) <= 1e-9);
  }
  SUBCASE("normals are unit length") {
    Rng rng(30);
    Tensor d = tdc::testing::rand_tensor({1, 1, 4, 4}, rng, 0.0, 3.0);
    Tensor n = normals_from_depth(d);
    int64_t hw = 16;
    for (int64_t i = 0; i < hw; ++i) {
      double nx = n.data()[i], ny = n.data()[hw + i], nz = n.data()[2 * hw + i];
      CHECK(nx * nx + ny * ny + nz * nz == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(nz > 0.0);
    }
  }
  SUBCASE("gradients") {
    Rng rng(31);
    Tensor d = tdc::testing::rand_tensor({1, 1, 3, 4}, rng, 0.5, 2.0);
    fd_check({d}, [](auto& in) { return normals_from_depth(in[0]); });
  }
}

TEST_CASE("linear layer") {
  Rng rng(32);
  Linear lin(5, 3, true, rng);
  Tensor x = rand_tensor({2, 4, 5}, rng);
  Tensor y = lin.forward(x);
  REQUIRE(y.shape() == Shape{2, 4, 3});
  // manual check of one output element
  double acc = lin.bias.data()[1];
  for (int k = 0; k < 5; ++k) acc += x.data()[k] * lin.weight.data()[5 + k];
  CHECK(y.data()[1] == doctest::Approx(acc).epsilon(1e-12));
  SUBCASE("weight and input gradients") {
    Tensor xs = rand_tensor({3, 5}, rng);
    fd_check({xs, lin.weight, lin.bias}, [&](auto& in) {
      Tensor w = in[1];
      Tensor b = in[2];
      Tensor flat = reshape(in[0], {3, 5});
      return add(matmul(flat, w, true), b);
    });
  }
}

TEST_CASE("module parameter registry") {
  Rng rng(33);
  Conv2d conv(3, 8, 3, 1, 1, 1, true, rng);
  auto named = conv.named_parameters();
  REQUIRE(named.size() == 2);
  CHECK(named[0].first == "weight");
  CHECK(named[1].first == "bias");
  CHECK(conv.num_params() == 8 * 3 * 3 * 3 + 8);
  BatchNorm2d bn(4);
  auto bufs = bn.named_buffers();
  REQUIRE(bufs.size() == 2);
  CHECK(bufs[0].first == "running_mean");
  CHECK(bufs[1].second->size() == 4);
}

TEST_CASE("adamw takes a descent step and decays weights") {
  Rng rng(34);
  Tensor w = Tensor::from_data({2}, {1.0, -2.0});
  w.set_requires_grad(true);
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamW opt({{"w", w}}, cfg);
  // minimize 0.5*||w||^2; gradient = w
  for (int step = 0; step < 200; ++step) {
    opt.zero_grad();
    Tensor loss = mul_scalar(sum_all(mul(w, w)), 0.5);
    loss.backward();
    opt.step();
  }
  CHECK(std::abs(w.data()[0]) < 1e-2);
  CHECK(std::abs(w.data()[1]) < 1e-2);

  SUBCASE("decoupled decay shrinks weights with zero gradient") {
    Tensor p = Tensor::from_data({1}, {1.0});
    p.set_requires_grad(true);
    AdamWConfig c2;
    c2.lr = 0.1;
    c2.weight_decay = 0.5;
    AdamW o2({{"p", p}}, c2);
    p.grad_data();  // zero gradient
    o2.step();
    CHECK(p.data()[0] == doctest::Approx(1.0 - 0.1 * 0.5 * 1.0));
  }
}

TEST_CASE("clip_grad_norm scales only above the threshold") {
  Tensor a = Tensor::from_data({2}, {0.0, 0.0});
  a.set_requires_grad(true);
  a.grad_data()[0] = 3.0;
  a.grad_data()[1] = 4.0;
  double n = clip_grad_norm({a}, 10.0);
  CHECK(n == doctest::Approx(5.0));
  CHECK(a.grad().data()[0] == doctest::Approx(3.0));
  double n2 = clip_grad_norm({a}, 1.0);
  CHECK(n2 == doctest::Approx(5.0));
  CHECK(a.grad().data()[0] == doctest::Approx(0.6));
  CHECK(a.grad().data()[1] == doctest::Approx(0.8));
}

}  // TEST_SUITE
