#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>

#include "lcanet/layers.hpp"
#include "lcanet/random.hpp"
#include "lcanet/tensor.hpp"

namespace lcanet {

inline constexpr std::size_t kKernelSize = 3;
inline constexpr std::size_t kFilters = 50;
inline constexpr std::size_t kDenseUnits = 10;
inline constexpr std::size_t kImageChannels = 3;

/// The trainable tensors of the fixed 11-layer stack, in checkpoint order.
template <typename S>
struct ModelParams {
  ConvParams<S> conv1, conv2;
  DenseParams<S> dense1, dense2;
  ConvParams<S> deconv1, deconv2, deconv3;

  /// Topology-shaped zero tensors.
  static ModelParams zeros() {
    const std::size_t k = kKernelSize, f = kFilters, d = kDenseUnits, c = kImageChannels;
    ModelParams p;
    p.conv1 = {Tensor<S>({k, k, c, f}), Tensor<S>({f})};
    p.conv2 = {Tensor<S>({k, k, f, f}), Tensor<S>({f})};
    p.dense1 = {Tensor<S>({f, d}), Tensor<S>({d})};
    p.dense2 = {Tensor<S>({d, d}), Tensor<S>({d})};
    p.deconv1 = {Tensor<S>({k, k, d, f}), Tensor<S>({f})};
    p.deconv2 = {Tensor<S>({k, k, f, f}), Tensor<S>({f})};
    p.deconv3 = {Tensor<S>({k, k, f, c}), Tensor<S>({c})};
    return p;
  }

  template <typename F>
  void for_each(F&& f) {
    f("conv1.w", conv1.w);
    f("conv1.b", conv1.b);
    f("conv2.w", conv2.w);
    f("conv2.b", conv2.b);
    f("dense1.w", dense1.w);
    f("dense1.b", dense1.b);
    f("dense2.w", dense2.w);
    f("dense2.b", dense2.b);
    f("deconv1.w", deconv1.w);
    f("deconv1.b", deconv1.b);
    f("deconv2.w", deconv2.w);
    f("deconv2.b", deconv2.b);
    f("deconv3.w", deconv3.w);
    f("deconv3.b", deconv3.b);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each(
        [&f](const char* name, const Tensor<S>& t) { f(name, t); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&n](const char*, const Tensor<S>& t) { n += t.size(); });
    return n;
  }
};

/// Pointers to the 14 parameter tensors in checkpoint order, for code that
/// walks params/grads/moments in lockstep.
template <typename S>
std::array<Tensor<S>*, 14> tensor_list(ModelParams<S>& p) {
  return {&p.conv1.w,   &p.conv1.b,   &p.conv2.w,   &p.conv2.b,   &p.dense1.w,
          &p.dense1.b,  &p.dense2.w,  &p.dense2.b,  &p.deconv1.w, &p.deconv1.b,
          &p.deconv2.w, &p.deconv2.b, &p.deconv3.w, &p.deconv3.b};
}
template <typename S>
std::array<const Tensor<S>*, 14> tensor_list(const ModelParams<S>& p) {
  return {&p.conv1.w,   &p.conv1.b,   &p.conv2.w,   &p.conv2.b,   &p.dense1.w,
          &p.dense1.b,  &p.dense2.w,  &p.dense2.b,  &p.deconv1.w, &p.deconv1.b,
          &p.deconv2.w, &p.deconv2.b, &p.deconv3.w, &p.deconv3.b};
}

/// Saved activations for one full forward pass.
template <typename S>
struct StackCache {
  ConvCache<S> conv1, conv2, deconv1, deconv2, deconv3;
  PoolCache pool1, pool2;
  UpsampleCache up1, up2;
  DenseCache<S> dense1, dense2;

  bool valid() const { return !conv1.input.empty(); }
};

namespace detail {

template <typename S>
ConvParams<S> glorot_conv(std::mt19937& rng, std::size_t k, std::size_t cin, std::size_t cout) {
  const double bound = std::sqrt(6.0 / double(k * k * cin + k * k * cout));
  return {uniform_tensor<S>({k, k, cin, cout}, rng, -bound, bound), Tensor<S>({cout})};
}

template <typename S>
DenseParams<S> glorot_dense(std::mt19937& rng, std::size_t cin, std::size_t cout) {
  const double bound = std::sqrt(6.0 / double(cin + cout));
  return {uniform_tensor<S>({cin, cout}, rng, -bound, bound), Tensor<S>({cout})};
}

// Little-endian checkpoint primitives.
inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
inline void write_u8(std::ostream& os, std::uint8_t v) { write_bytes(os, &v, 1); }
inline void write_u16(std::ostream& os, std::uint16_t v) {
  const std::uint8_t b[2] = {std::uint8_t(v & 0xff), std::uint8_t(v >> 8)};
  write_bytes(os, b, 2);
}
inline void write_u32(std::ostream& os, std::uint32_t v) {
  const std::uint8_t b[4] = {std::uint8_t(v & 0xff), std::uint8_t((v >> 8) & 0xff),
                             std::uint8_t((v >> 16) & 0xff), std::uint8_t(v >> 24)};
  write_bytes(os, b, 4);
}
inline void write_f32(std::ostream& os, float v) { write_u32(os, std::bit_cast<std::uint32_t>(v)); }

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw CheckpointError(CheckpointError::Kind::truncated,
                          std::string("checkpoint truncated while reading ") + what);
  }
}
inline std::uint8_t read_u8(std::istream& is, const char* what) {
  std::uint8_t v;
  read_bytes(is, &v, 1, what);
  return v;
}
inline std::uint16_t read_u16(std::istream& is, const char* what) {
  std::uint8_t b[2];
  read_bytes(is, b, 2, what);
  return std::uint16_t(b[0] | (std::uint16_t(b[1]) << 8));
}
inline std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint8_t b[4];
  read_bytes(is, b, 4, what);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}
inline float read_f32(std::istream& is, const char* what) {
  return std::bit_cast<float>(read_u32(is, what));
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'L', 'C', 'A', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// The 11-layer convolutional autoencoder:
///   Conv(3->50) -> AvgPool2 -> Conv(50->50) -> AvgPool2
///   -> Dense(50->10) -> Dense(10->10)
///   -> Deconv(10->50) -> Upsample2 -> Deconv(50->50) -> Upsample2
///   -> Deconv(50->3, linear).
/// Inputs are H x W x 3 with H and W divisible by 4; the output has the
/// input's shape and is not clamped (clamping is an image-export concern).
template <typename S>
class Model {
 public:
  Model() : params_(ModelParams<S>::zeros()) {}
  explicit Model(ModelParams<S> params) : params_(std::move(params)) {}

  /// Seeded deterministic init: Glorot-uniform weights, zero biases. The same
  /// seed yields bitwise-identical parameters.
  static Model init(std::uint64_t seed) {
    std::mt19937 rng(static_cast<std::uint32_t>(seed));
    ModelParams<S> p;
    p.conv1 = detail::glorot_conv<S>(rng, kKernelSize, kImageChannels, kFilters);
    p.conv2 = detail::glorot_conv<S>(rng, kKernelSize, kFilters, kFilters);
    p.dense1 = detail::glorot_dense<S>(rng, kFilters, kDenseUnits);
    p.dense2 = detail::glorot_dense<S>(rng, kDenseUnits, kDenseUnits);
    p.deconv1 = detail::glorot_conv<S>(rng, kKernelSize, kDenseUnits, kFilters);
    p.deconv2 = detail::glorot_conv<S>(rng, kKernelSize, kFilters, kFilters);
    p.deconv3 = detail::glorot_conv<S>(rng, kKernelSize, kFilters, kImageChannels);
    return Model(std::move(p));
  }

  ModelParams<S>& params() { return params_; }
  const ModelParams<S>& params() const { return params_; }
  std::size_t parameter_count() const { return params_.parameter_count(); }

  Tensor<S> forward(const Tensor<S>& x, StackCache<S>* sc = nullptr) const {
    if (x.rank() != 3 || x.dim(2) != kImageChannels) {
      throw ShapeError("model forward: input must be H x W x 3, got " +
                       shape_to_string(x.shape()));
    }
    if (x.dim(0) % 4 != 0 || x.dim(1) % 4 != 0) {
      throw ShapeError("model forward: H and W must be divisible by 4, got " +
                       shape_to_string(x.shape()));
    }
    Tensor<S> t = conv2d_forward(x, params_.conv1, Activation::relu, sc ? &sc->conv1 : nullptr);
    t = avgpool2_forward(t, sc ? &sc->pool1 : nullptr);
    t = conv2d_forward(t, params_.conv2, Activation::relu, sc ? &sc->conv2 : nullptr);
    t = avgpool2_forward(t, sc ? &sc->pool2 : nullptr);
    t = dense_forward(t, params_.dense1, Activation::relu, sc ? &sc->dense1 : nullptr);
    t = dense_forward(t, params_.dense2, Activation::relu, sc ? &sc->dense2 : nullptr);
    t = deconv2d_forward(t, params_.deconv1, Activation::relu, sc ? &sc->deconv1 : nullptr);
    t = upsample2_forward(t, sc ? &sc->up1 : nullptr);
    t = deconv2d_forward(t, params_.deconv2, Activation::relu, sc ? &sc->deconv2 : nullptr);
    t = upsample2_forward(t, sc ? &sc->up2 : nullptr);
    t = deconv2d_forward(t, params_.deconv3, Activation::linear, sc ? &sc->deconv3 : nullptr);
    return t;
  }

  /// Gradients of every parameter for the upstream dL/dy, mirroring the
  /// parameter shapes. The cache is read-only; calling twice gives identical
  /// results.
  ModelParams<S> backward(const StackCache<S>& sc, const Tensor<S>& dy) const {
    if (!sc.valid()) {
      throw ShapeError("model backward: cache was not produced by a cached forward pass");
    }
    ModelParams<S> g;
    auto b3 = deconv2d_backward(sc.deconv3, params_.deconv3, dy);
    g.deconv3 = std::move(b3.grads);
    Tensor<S> d = upsample2_backward(sc.up2, b3.dx);
    auto b2 = deconv2d_backward(sc.deconv2, params_.deconv2, d);
    g.deconv2 = std::move(b2.grads);
    d = upsample2_backward(sc.up1, b2.dx);
    auto b1 = deconv2d_backward(sc.deconv1, params_.deconv1, d);
    g.deconv1 = std::move(b1.grads);
    auto bd2 = dense_backward(sc.dense2, params_.dense2, b1.dx);
    g.dense2 = std::move(bd2.grads);
    auto bd1 = dense_backward(sc.dense1, params_.dense1, bd2.dx);
    g.dense1 = std::move(bd1.grads);
    d = avgpool2_backward(sc.pool2, bd1.dx);
    auto bc2 = conv2d_backward(sc.conv2, params_.conv2, d);
    g.conv2 = std::move(bc2.grads);
    d = avgpool2_backward(sc.pool1, bc2.dx);
    auto bc1 = conv2d_backward(sc.conv1, params_.conv1, d);
    g.conv1 = std::move(bc1.grads);
    return g;
  }

  /// Checkpoint format (little-endian): magic "LCAN" | u32 version=1 |
  /// u32 tensor-count | per tensor: u16 name-length, name, u8 rank,
  /// rank x u32 dims, dims-product x f32 data. Tensor names and order are
  /// fixed by ModelParams::for_each.
  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
      throw CheckpointError(CheckpointError::Kind::io,
                            "cannot open checkpoint for writing: " + path.string());
    }
    detail::write_bytes(os, kCheckpointMagic, 4);
    detail::write_u32(os, kCheckpointVersion);
    detail::write_u32(os, 14);
    params_.for_each([&os](const char* name, const Tensor<S>& t) {
      const std::string_view n(name);
      detail::write_u16(os, static_cast<std::uint16_t>(n.size()));
      detail::write_bytes(os, n.data(), n.size());
      detail::write_u8(os, static_cast<std::uint8_t>(t.rank()));
      for (std::size_t d : t.shape()) detail::write_u32(os, static_cast<std::uint32_t>(d));
      for (S v : t.values()) detail::write_f32(os, static_cast<float>(v));
    });
    os.flush();
    if (!os) {
      throw CheckpointError(CheckpointError::Kind::io, "write failed: " + path.string());
    }
  }

  static Model load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
      throw CheckpointError(CheckpointError::Kind::io,
                            "cannot open checkpoint: " + path.string());
    }
    char magic[4];
    detail::read_bytes(is, magic, 4, "magic");
    if (!std::equal(magic, magic + 4, kCheckpointMagic)) {
      throw CheckpointError(CheckpointError::Kind::bad_magic, "not a checkpoint file (bad magic)");
    }
    const std::uint32_t version = detail::read_u32(is, "version");
    if (version != kCheckpointVersion) {
      throw CheckpointError(CheckpointError::Kind::bad_version,
                            "unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t count = detail::read_u32(is, "tensor count");
    if (count != 14) {
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            "expected 14 tensors, file declares " + std::to_string(count));
    }
    Model m;
    m.params_.for_each([&is](const char* name, Tensor<S>& t) {
      const std::uint16_t len = detail::read_u16(is, "name length");
      std::string got(len, '\0');
      detail::read_bytes(is, got.data(), len, "name");
      if (got != name) {
        throw CheckpointError(CheckpointError::Kind::bad_tensor_name,
                              "unexpected tensor '" + got + "' (expected '" + name + "')");
      }
      const std::uint8_t rank = detail::read_u8(is, "rank");
      if (rank != t.rank()) {
        throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                              std::string("tensor '") + name + "' has rank " +
                                  std::to_string(rank) + ", expected " + std::to_string(t.rank()));
      }
      for (std::size_t a = 0; a < t.rank(); ++a) {
        const std::uint32_t d = detail::read_u32(is, "dims");
        if (d != t.dim(a)) {
          throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                                std::string("tensor '") + name + "' dim " + std::to_string(a) +
                                    " is " + std::to_string(d) + ", expected " +
                                    std::to_string(t.dim(a)));
        }
      }
      for (S& v : t.values()) v = static_cast<S>(detail::read_f32(is, name));
    });
    return m;
  }

 private:
  ModelParams<S> params_;
};

using ModelF = Model<float>;
using ModelD = Model<double>;

}  // namespace lcanet
