#pragma once

// The shared network f: R^D -> R^K behind both heads. Parameters live in one
// flat vector; layers address their weights through Eigen::Map views into it.
// Activations are stored column-wise (one column per sample); convolutional
// feature maps are flattened channel-major (c, y, x).

#include "calico/core.hpp"
#include "calico/heads.hpp"

#include <iosfwd>
#include <type_traits>
#include <string>
#include <vector>

namespace calico {

enum class ArchKind { mlp, cnn };
enum class Activation { swish, identity };

struct Arch {
  ArchKind kind = ArchKind::mlp;
  int num_classes = 2;
  Activation activation = Activation::swish;
  // mlp
  int input_dim = 2;
  std::vector<int> hidden{64, 64};
  // cnn
  int channels = 1;
  int height = 28;
  int width = 28;
  std::vector<int> conv_channels{16, 32};

  int dim() const { return kind == ArchKind::mlp ? input_dim : channels * height * width; }
  bool operator==(const Arch&) const = default;
};

Arch mlp_arch(int input_dim, std::vector<int> hidden, int num_classes,
              Activation act = Activation::swish);
Arch cnn_arch(int channels, int height, int width, int num_classes,
              std::vector<int> conv_channels = {16, 32});

std::string to_string(ArchKind);
std::string to_string(Activation);

struct Layer {
  enum class Kind { dense, conv, swish, pool };
  Kind kind;
  Index in = 0;
  Index out = 0;
  Index offset = 0;
  // conv / pool geometry
  int cin = 0, cout = 0, h = 0, w = 0, hout = 0, wout = 0, stride = 1;

  Index num_params() const {
    switch (kind) {
      case Kind::dense: return out * in + out;
      case Kind::conv: return Index(cout) * cin * 9 + cout;
      default: return 0;
    }
  }
  const char* name() const {
    switch (kind) {
      case Kind::dense: return "dense";
      case Kind::conv: return "conv3x3";
      case Kind::swish: return "swish";
      case Kind::pool: return "global_pool";
    }
    return "?";
  }
};

std::vector<Layer> build_layers(const Arch& arch);

template <typename Scalar = double>
struct ModelState {
  Arch arch;
  VectorX<Scalar> params;
  std::uint64_t seed = 0;
};

template <typename Scalar>
class Network {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  // Inputs to every layer, recorded by forward() for the backward pass.
  struct Tape {
    std::vector<Matrix> inputs;
  };

  explicit Network(Arch arch) : arch_(std::move(arch)), layers_(build_layers(arch_)) {
    for (const auto& l : layers_) num_params_ += l.num_params();
  }

  const Arch& arch() const { return arch_; }
  const std::vector<Layer>& layers() const { return layers_; }
  Index num_params() const { return num_params_; }
  Index input_dim() const { return arch_.dim(); }
  Index num_classes() const { return arch_.num_classes; }

  /// He-style fan-in initialization; biases start at zero.
  Vector init_params(std::uint64_t seed) const {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector theta = Vector::Zero(num_params_);
    for (const auto& l : layers_) {
      Index fan_in = 0, nweights = 0;
      if (l.kind == Layer::Kind::dense) {
        fan_in = l.in;
        nweights = l.in * l.out;
      } else if (l.kind == Layer::Kind::conv) {
        fan_in = Index(l.cin) * 9;
        nweights = fan_in * l.cout;
      } else {
        continue;
      }
      const double scale = std::sqrt(2.0 / double(fan_in));
      for (Index i = 0; i < nweights; ++i) theta(l.offset + i) = Scalar(scale * normal(rng));
    }
    return theta;
  }

  Matrix forward(const Vector& theta, const Eigen::Ref<const Matrix>& x, Tape* tape = nullptr) const {
    check_shapes(theta, x);
    if (tape) tape->inputs.clear();
    Matrix cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Matrix next = layer_forward(layers_[i], theta, cur);
      if (!next.allFinite())
        throw NumericError("non-finite activation in layer " + std::to_string(i) + " (" +
                           layers_[i].name() + ")");
      if (tape) tape->inputs.push_back(std::move(cur));
      cur = std::move(next);
    }
    return cur;
  }

  /// Backpropagates dL/dlogits through layers [1, n) and returns dL/d(output of layer 0).
  /// Parameter gradients of those layers are accumulated into grad_theta when non-null.
  Matrix backward_to_first_output(const Vector& theta, const Tape& tape, const Eigen::Ref<const Matrix>& dlogits,
                                  Vector* grad_theta) const {
    Matrix d = dlogits;
    for (std::size_t i = layers_.size(); i-- > 1;) d = layer_backward(layers_[i], theta, tape.inputs[i], d, grad_theta, true);
    return d;
  }

  /// Input gradient of layer 0 given dL/d(its output). Layer 0 is always linear
  /// (dense or conv), so this does not depend on the input it was evaluated at.
  Matrix first_layer_input_grad(const Vector& theta, const Eigen::Ref<const Matrix>& dfirst) const {
    const Layer& l = layers_.front();
    if (l.kind == Layer::Kind::dense) return dense_weights(l, theta).transpose() * dfirst;
    Matrix dx = Matrix::Zero(l.in, dfirst.cols());
    for (Index j = 0; j < dfirst.cols(); ++j) {
      Eigen::Map<const Matrix> dout_t(dfirst.col(j).data(), Index(l.hout) * l.wout, l.cout);
      Matrix dpatches = dout_t * conv_weights(l, theta);
      col2im(l, dpatches, dx.col(j).data());
    }
    return dx;
  }

  /// Full backward pass. Accumulates into grad_theta and/or writes grad_input.
  void backward(const Vector& theta, const Tape& tape, const Eigen::Ref<const Matrix>& dlogits,
                Vector* grad_theta, Matrix* grad_input) const {
    Matrix dfirst = backward_to_first_output(theta, tape, dlogits, grad_theta);
    if (grad_theta) layer_backward(layers_.front(), theta, tape.inputs.front(), dfirst, grad_theta, false);
    if (grad_input) *grad_input = first_layer_input_grad(theta, dfirst);
  }

 private:
  void check_shapes(const Vector& theta, const Eigen::Ref<const Matrix>& x) const {
    require(theta.size() == num_params_, "parameter count " + std::to_string(theta.size()) +
                                             " does not match architecture (" + std::to_string(num_params_) + ")");
    require(x.rows() == input_dim(), "input dimension " + std::to_string(x.rows()) + " does not match architecture (" +
                                         std::to_string(input_dim()) + ")");
  }

  static Eigen::Map<const Matrix> dense_weights(const Layer& l, const Vector& theta) {
    return Eigen::Map<const Matrix>(theta.data() + l.offset, l.out, l.in);
  }
  static Eigen::Map<const Vector> dense_bias(const Layer& l, const Vector& theta) {
    return Eigen::Map<const Vector>(theta.data() + l.offset + l.out * l.in, l.out);
  }
  // cout x (cin*9), column index = ci*9 + ky*3 + kx
  static Eigen::Map<const Matrix> conv_weights(const Layer& l, const Vector& theta) {
    return Eigen::Map<const Matrix>(theta.data() + l.offset, l.cout, Index(l.cin) * 9);
  }
  static Eigen::Map<const Vector> conv_bias(const Layer& l, const Vector& theta) {
    return Eigen::Map<const Vector>(theta.data() + l.offset + Index(l.cout) * l.cin * 9, l.cout);
  }

  // positions x (cin*9), zero padding of 1
  static Matrix im2col(const Layer& l, const Scalar* in) {
    Matrix patches(Index(l.hout) * l.wout, Index(l.cin) * 9);
    for (int oy = 0; oy < l.hout; ++oy)
      for (int ox = 0; ox < l.wout; ++ox) {
        const Index p = Index(oy) * l.wout + ox;
        for (int c = 0; c < l.cin; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * l.stride + ky - 1;
              const int ix = ox * l.stride + kx - 1;
              const bool inside = iy >= 0 && iy < l.h && ix >= 0 && ix < l.w;
              patches(p, Index(c) * 9 + ky * 3 + kx) = inside ? in[(Index(c) * l.h + iy) * l.w + ix] : Scalar(0);
            }
      }
    return patches;
  }

  static void col2im(const Layer& l, const Matrix& dpatches, Scalar* din) {
    for (int oy = 0; oy < l.hout; ++oy)
      for (int ox = 0; ox < l.wout; ++ox) {
        const Index p = Index(oy) * l.wout + ox;
        for (int c = 0; c < l.cin; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * l.stride + ky - 1;
              const int ix = ox * l.stride + kx - 1;
              if (iy >= 0 && iy < l.h && ix >= 0 && ix < l.w)
                din[(Index(c) * l.h + iy) * l.w + ix] += dpatches(p, Index(c) * 9 + ky * 3 + kx);
            }
      }
  }

  static Matrix layer_forward(const Layer& l, const Vector& theta, const Matrix& x) {
    switch (l.kind) {
      case Layer::Kind::dense: {
        Matrix y = dense_weights(l, theta) * x;
        y.colwise() += dense_bias(l, theta);
        return y;
      }
      case Layer::Kind::conv: {
        const Index npos = Index(l.hout) * l.wout;
        Matrix y(l.out, x.cols());
        const auto w = conv_weights(l, theta);
        const auto b = conv_bias(l, theta);
        for (Index j = 0; j < x.cols(); ++j) {
          Matrix out_t = im2col(l, x.col(j).data()) * w.transpose();
          out_t.rowwise() += b.transpose();
          y.col(j) = Eigen::Map<const Vector>(out_t.data(), npos * l.cout);
        }
        return y;
      }
      case Layer::Kind::swish: {
        const auto s = sigmoid(x);
        return (x.array() * s.array()).matrix();
      }
      case Layer::Kind::pool: {
        const Index npos = Index(l.h) * l.w;
        Matrix y(l.out, x.cols());
        for (Index j = 0; j < x.cols(); ++j)
          y.col(j) = Eigen::Map<const Matrix>(x.col(j).data(), npos, l.cin).colwise().mean().transpose();
        return y;
      }
    }
    return {};
  }

  static Matrix sigmoid(const Matrix& z) { return (Scalar(1) / (Scalar(1) + (-z.array()).exp())).matrix(); }

  // Returns dL/dx when want_input; accumulates parameter gradients into grad_theta.
  static Matrix layer_backward(const Layer& l, const Vector& theta, const Matrix& x, const Matrix& dy,
                               Vector* grad_theta, bool want_input) {
    switch (l.kind) {
      case Layer::Kind::dense: {
        const auto w = dense_weights(l, theta);
        if (grad_theta) {
          Eigen::Map<Matrix> dw(grad_theta->data() + l.offset, l.out, l.in);
          Eigen::Map<Vector> db(grad_theta->data() + l.offset + l.out * l.in, l.out);
          dw.noalias() += dy * x.transpose();
          db += dy.rowwise().sum();
        }
        if (!want_input) return {};
        return w.transpose() * dy;
      }
      case Layer::Kind::conv: {
        const Index npos = Index(l.hout) * l.wout;
        const auto w = conv_weights(l, theta);
        Matrix dx;
        if (want_input) dx = Matrix::Zero(l.in, x.cols());
        for (Index j = 0; j < x.cols(); ++j) {
          Eigen::Map<const Matrix> dout_t(dy.col(j).data(), npos, l.cout);
          if (grad_theta) {
            Eigen::Map<Matrix> dw(grad_theta->data() + l.offset, l.cout, Index(l.cin) * 9);
            Eigen::Map<Vector> db(grad_theta->data() + l.offset + Index(l.cout) * l.cin * 9, l.cout);
            dw.noalias() += dout_t.transpose() * im2col(l, x.col(j).data());
            db += dout_t.colwise().sum().transpose();
          }
          if (want_input) {
            Matrix dpatches = dout_t * w;
            col2im(l, dpatches, dx.col(j).data());
          }
        }
        return dx;
      }
      case Layer::Kind::swish: {
        const Matrix s = sigmoid(x);
        return (dy.array() * s.array() * (Scalar(1) + x.array() * (Scalar(1) - s.array()))).matrix();
      }
      case Layer::Kind::pool: {
        const Index npos = Index(l.h) * l.w;
        Matrix dx(l.in, dy.cols());
        for (Index j = 0; j < dy.cols(); ++j) {
          Eigen::Map<Matrix> d(dx.col(j).data(), npos, l.cin);
          d.rowwise() = dy.col(j).transpose() / Scalar(npos);
        }
        return dx;
      }
    }
    return {};
  }

  Arch arch_;
  std::vector<Layer> layers_;
  Index num_params_ = 0;
};

template <typename Scalar = double>
ModelState<Scalar> init_model(const Arch& arch, std::uint64_t seed) {
  return {arch, Network<Scalar>(arch).init_params(seed), seed};
}

/// Forward pass; columns of x are samples.
template <typename Scalar>
MatrixX<Scalar> logits(const ModelState<Scalar>& state, const Eigen::Ref<const MatrixX<std::type_identity_t<Scalar>>>& x) {
  return Network<Scalar>(state.arch).forward(state.params, x);
}

/// Gradient of E(x) = -LogSumExp(f(x)) with respect to each input column.
template <typename Scalar>
MatrixX<Scalar> grad_energy_input(const ModelState<Scalar>& state, const Eigen::Ref<const MatrixX<std::type_identity_t<Scalar>>>& x) {
  Network<Scalar> net(state.arch);
  typename Network<Scalar>::Tape tape;
  const MatrixX<Scalar> l = net.forward(state.params, x, &tape);
  MatrixX<Scalar> grad;
  net.backward(state.params, tape, -softmax(l), nullptr, &grad);
  return grad;
}

// Versioned checkpoint: a text header describing the architecture followed by
// the raw little-endian float64 parameter vector.
void save_model(const ModelState<double>& state, const std::string& path);
ModelState<double> load_model(const std::string& path);
void write_arch(std::ostream& os, const Arch& arch);
Arch read_arch(std::istream& is);

}  // namespace calico
