#ifndef SSPRL_NN_HPP_
#define SSPRL_NN_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "ssprl/common.hpp"
#include "ssprl/rng.hpp"

namespace ssprl::nn {

// Activations live in a "feature map batch": channels x (H*W*count), where
// column n*H*W + y*W + x holds all channels of patch n at position (y, x).
template <typename T>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  int count = 0;  // number of patches in the batch
  MatX<T> data;   // channels x (height*width*count)

  FeatureMap() = default;
  FeatureMap(int c, int h, int w, int n)
      : channels(c), height(h), width(w), count(n), data(MatX<T>::Zero(c, h * w * n)) {}
};

template <typename T>
struct ParamRef {
  std::string name;
  MatX<T>* value;
  MatX<T>* grad;
  bool weight_decay;
};

template <typename T>
void he_normal_init(MatX<T>& w, int fan_in, RandomStream& rng) {
  const double stddev = std::sqrt(2.0 / fan_in);
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      w(i, j) = static_cast<T>(rng.normal(0.0, stddev));
}

// ---------------------------------------------------------------------------

/// 3x3 convolution, stride 1, zero padding 1.
template <typename T>
struct Conv3x3 {
  int in_ch = 0, out_ch = 0;
  MatX<T> W;   // out_ch x in_ch*9
  MatX<T> b;   // out_ch x 1
  MatX<T> gW;
  MatX<T> gb;

  Conv3x3() = default;
  Conv3x3(int in, int out, RandomStream& rng) : in_ch(in), out_ch(out) {
    W.resize(out, in * 9);
    he_normal_init(W, in * 9, rng);
    b = MatX<T>::Zero(out, 1);
    zero_grads();
  }

  void zero_grads() {
    gW = MatX<T>::Zero(out_ch, in_ch * 9);
    gb = MatX<T>::Zero(out_ch, 1);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".W", &W, &gW, true});
    out.push_back({prefix + ".b", &b, &gb, false});
  }

  FeatureMap<T> forward(const FeatureMap<T>& x) {
    H_ = x.height;
    Wd_ = x.width;
    N_ = x.count;
    build_cols(x.data);
    FeatureMap<T> y(out_ch, H_, Wd_, N_);
    y.data.noalias() = W * cols_;
    y.data.colwise() += b.col(0);
    return y;
  }

  FeatureMap<T> backward(const FeatureMap<T>& dy) {
    gW.noalias() += dy.data * cols_.transpose();
    gb.col(0) += dy.data.rowwise().sum();
    MatX<T> dcols = W.transpose() * dy.data;
    FeatureMap<T> dx(in_ch, H_, Wd_, N_);
    scatter_cols(dcols, dx.data);
    return dx;
  }

 private:
  MatX<T> cols_;  // in_ch*9 x H*W*N
  int H_ = 0, Wd_ = 0, N_ = 0;

  // One block copy per (offset, patch, row): source and destination columns
  // advance together along x, so each copy is a contiguous in_ch x len block.
  void build_cols(const MatX<T>& x) {
    const int hw = H_ * Wd_;
    cols_ = MatX<T>::Zero(in_ch * 9, hw * N_);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int block = ((dy + 1) * 3 + (dx + 1)) * in_ch;
        const int x_lo = std::max(0, -dx), x_hi = std::min(Wd_, Wd_ - dx);
        const int len = x_hi - x_lo;
        if (len <= 0) continue;
        for (int n = 0; n < N_; ++n)
          for (int y = std::max(0, -dy); y < std::min(H_, H_ - dy); ++y) {
            const int dst = n * hw + y * Wd_ + x_lo;
            const int src = n * hw + (y + dy) * Wd_ + (x_lo + dx);
            cols_.block(block, dst, in_ch, len) = x.block(0, src, in_ch, len);
          }
      }
  }

  void scatter_cols(const MatX<T>& dcols, MatX<T>& dx) const {
    const int hw = H_ * Wd_;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx_ = -1; dx_ <= 1; ++dx_) {
        const int block = ((dy + 1) * 3 + (dx_ + 1)) * in_ch;
        const int x_lo = std::max(0, -dx_), x_hi = std::min(Wd_, Wd_ - dx_);
        const int len = x_hi - x_lo;
        if (len <= 0) continue;
        for (int n = 0; n < N_; ++n)
          for (int y = std::max(0, -dy); y < std::min(H_, H_ - dy); ++y) {
            const int dst = n * hw + y * Wd_ + x_lo;
            const int src = n * hw + (y + dy) * Wd_ + (x_lo + dx_);
            dx.block(0, src, in_ch, len) += dcols.block(block, dst, in_ch, len);
          }
      }
  }
};

template <typename T>
struct ReLU {
  FeatureMap<T> forward(const FeatureMap<T>& x) {
    FeatureMap<T> y = x;
    y.data = y.data.cwiseMax(T(0));
    mask_ = y.data;
    return y;
  }
  FeatureMap<T> backward(const FeatureMap<T>& dy) {
    FeatureMap<T> dx = dy;
    dx.data = (mask_.array() > T(0)).select(dy.data, MatX<T>::Zero(dy.data.rows(), dy.data.cols()));
    return dx;
  }

 private:
  MatX<T> mask_;
};

/// 2x2 max pooling, stride 2.
template <typename T>
struct MaxPool2 {
  FeatureMap<T> forward(const FeatureMap<T>& x) {
    if (x.height % 2 != 0 || x.width % 2 != 0)
      throw DimensionError("MaxPool2: spatial dims must be even");
    H_ = x.height;
    Wd_ = x.width;
    N_ = x.count;
    const int oh = H_ / 2, ow = Wd_ / 2;
    FeatureMap<T> y(x.channels, oh, ow, N_);
    arg_.resize(x.channels, oh * ow * N_);
    const int hw = H_ * Wd_, ohw = oh * ow;
    for (int n = 0; n < N_; ++n)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          const int out = n * ohw + yy * ow + xx;
          const int base = n * hw + 2 * yy * Wd_ + 2 * xx;
          const int src[4] = {base, base + 1, base + Wd_, base + Wd_ + 1};
          for (int c = 0; c < x.channels; ++c) {
            T best = x.data(c, src[0]);
            int bi = 0;
            for (int k = 1; k < 4; ++k)
              if (x.data(c, src[k]) > best) {
                best = x.data(c, src[k]);
                bi = k;
              }
            y.data(c, out) = best;
            arg_(c, out) = static_cast<std::int8_t>(bi);
          }
        }
    return y;
  }

  FeatureMap<T> backward(const FeatureMap<T>& dy) {
    const int oh = H_ / 2, ow = Wd_ / 2;
    FeatureMap<T> dx(static_cast<int>(dy.data.rows()), H_, Wd_, N_);
    const int hw = H_ * Wd_, ohw = oh * ow;
    for (int n = 0; n < N_; ++n)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          const int out = n * ohw + yy * ow + xx;
          const int base = n * hw + 2 * yy * Wd_ + 2 * xx;
          for (int c = 0; c < dy.data.rows(); ++c) {
            int bi = arg_(c, out);
            int src = base + (bi & 1) + (bi >> 1) * Wd_;
            dx.data(c, src) += dy.data(c, out);
          }
        }
    return dx;
  }

 private:
  Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic> arg_;
  int H_ = 0, Wd_ = 0, N_ = 0;
};

/// Mean over all spatial positions: C x (H*W*N) -> C x N.
template <typename T>
struct GlobalAvgPool {
  MatX<T> forward(const FeatureMap<T>& x) {
    hw_ = x.height * x.width;
    MatX<T> y(x.channels, x.count);
    for (int n = 0; n < x.count; ++n)
      y.col(n) = x.data.middleCols(n * hw_, hw_).rowwise().sum() / T(hw_);
    dims_ = {x.channels, x.height, x.width, x.count};
    return y;
  }
  FeatureMap<T> backward(const MatX<T>& dy) {
    FeatureMap<T> dx(dims_.channels, dims_.height, dims_.width, dims_.count);
    for (int n = 0; n < dims_.count; ++n) {
      VecX<T> g = dy.col(n) / T(hw_);
      dx.data.middleCols(n * hw_, hw_) = g.replicate(1, hw_);
    }
    return dx;
  }

 private:
  struct Dims {
    int channels, height, width, count;
  } dims_{};
  int hw_ = 0;
};

template <typename T>
struct Linear {
  int in_dim = 0, out_dim = 0;
  MatX<T> W;  // out x in
  MatX<T> b;  // out x 1
  MatX<T> gW;
  MatX<T> gb;

  Linear() = default;
  Linear(int in, int out, RandomStream& rng) : in_dim(in), out_dim(out) {
    W.resize(out, in);
    he_normal_init(W, in, rng);
    b = MatX<T>::Zero(out, 1);
    zero_grads();
  }

  void zero_grads() {
    gW = MatX<T>::Zero(out_dim, in_dim);
    gb = MatX<T>::Zero(out_dim, 1);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".W", &W, &gW, true});
    out.push_back({prefix + ".b", &b, &gb, false});
  }

  MatX<T> forward(const MatX<T>& x) {
    if (x.rows() != in_dim)
      throw DimensionError("Linear: input dim " + std::to_string(x.rows()) +
                           ", expected " + std::to_string(in_dim));
    x_ = x;
    MatX<T> y = W * x;
    y.colwise() += b.col(0);
    return y;
  }

  MatX<T> backward(const MatX<T>& dy) {
    gW.noalias() += dy * x_.transpose();
    gb.col(0) += dy.rowwise().sum();
    return W.transpose() * dy;
  }

 private:
  MatX<T> x_;
};

/// Column-wise L2 normalization with matching backward pass.
template <typename T>
struct L2NormalizeCols {
  MatX<T> forward(const MatX<T>& y) {
    norms_ = y.colwise().norm();
    z_ = y;
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      if (norms_(j) <= T(0)) throw NumericError("L2NormalizeCols: zero-norm column");
      z_.col(j) /= norms_(j);
    }
    return z_;
  }
  MatX<T> backward(const MatX<T>& dz) {
    MatX<T> dy(dz.rows(), dz.cols());
    for (Eigen::Index j = 0; j < dz.cols(); ++j) {
      T dot = z_.col(j).dot(dz.col(j));
      dy.col(j) = (dz.col(j) - z_.col(j) * dot) / norms_(j);
    }
    return dy;
  }

 private:
  Eigen::Matrix<T, 1, Eigen::Dynamic> norms_;
  MatX<T> z_;
};

/// Column-wise softmax, stabilized by max subtraction.
template <typename T>
MatX<T> colwise_softmax(const MatX<T>& logits) {
  MatX<T> out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    VecX<T> col = logits.col(j);
    T m = col.maxCoeff();
    col = (col.array() - m).exp();
    out.col(j) = col / col.sum();
  }
  return out;
}

/// Backward through column-wise softmax: given p = softmax(v) and dL/dp,
/// returns dL/dv = p .* (dL/dp - <p, dL/dp>).
template <typename T>
MatX<T> colwise_softmax_backward(const MatX<T>& p, const MatX<T>& dp) {
  MatX<T> dv(p.rows(), p.cols());
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    T dot = p.col(j).dot(dp.col(j));
    dv.col(j) = p.col(j).array() * (dp.col(j).array() - dot);
  }
  return dv;
}

}  // namespace ssprl::nn

#endif  // SSPRL_NN_HPP_
