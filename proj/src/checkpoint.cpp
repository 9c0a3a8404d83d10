/*
 * Copyright (c) 2026 The lcp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lcp/errors.hpp"
#include "lcp/io.hpp"
#include "lcp/nn.hpp"

// Layout (little-endian):
//   "LCPN" u32 version u8 scalar_bytes u64 input_dim u32 layer_count
//   layer records ...
//   u64 FNV-1a of all preceding bytes

namespace lcp::nn {
namespace {

constexpr std::uint32_t kVersion = 1;

enum Tag : std::uint8_t {
  kDense = 1,
  kBatchNorm = 2,
  kDropout = 3,
  kActivation = 4,
  kResidualBegin = 5,
  kResidualEnd = 6,
};

class Writer {
 public:
  explicit Writer(int scalar_bytes) : scalar_bytes_(scalar_bytes) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }
  void scalars(std::span<const double> vals) {
    for (double v : vals) {
      if (scalar_bytes_ == 4)
        put_le(std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
      else
        f64(v);
    }
  }
  std::vector<std::uint8_t> finish() {
    u64(fnv1a64(out_));
    return std::move(out_);
  }

 private:
  void put_le(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  int scalar_bytes_;
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  double f64() { return std::bit_cast<double>(get_le(8)); }
  void scalars(int scalar_bytes, std::span<double> dst) {
    for (double& v : dst) {
      if (scalar_bytes == 4)
        v = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(get_le(4))));
      else
        v = f64();
    }
  }
  std::size_t count(std::uint64_t v) {
    // Reject sizes that cannot fit in the remaining payload.
    if (v > bytes_.size()) throw DataError("checkpoint: implausible dimension");
    return static_cast<std::size_t>(v);
  }

 private:
  std::uint64_t get_le(int n) {
    if (pos_ + static_cast<std::size_t>(n) > bytes_.size())
      throw DataError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

bool fits_float(std::span<const double> v) {
  for (double x : v)
    if (static_cast<double>(static_cast<float>(x)) != x &&
        !(std::isnan(x) && std::isnan(static_cast<float>(x))))
      return false;
  return true;
}

bool net_fits_float(const Mlp& net) {
  for (const Layer& l : net.layers()) {
    if (auto* d = std::get_if<DenseLayer>(&l)) {
      if (!fits_float(d->weights.values()) || !fits_float(d->bias)) return false;
    } else if (auto* b = std::get_if<BatchNormLayer>(&l)) {
      if (!fits_float(b->gamma) || !fits_float(b->beta) || !fits_float(b->running_mean) ||
          !fits_float(b->running_var))
        return false;
    }
  }
  return true;
}

}  // namespace

std::vector<std::uint8_t> serialize(const Mlp& net) {
  const int sb = net_fits_float(net) ? 4 : 8;
  Writer w(sb);
  w.u8('L');
  w.u8('C');
  w.u8('P');
  w.u8('N');
  w.u32(kVersion);
  w.u8(static_cast<std::uint8_t>(sb));
  w.u64(net.input_dim());
  w.u32(static_cast<std::uint32_t>(net.layers().size()));
  for (const Layer& l : net.layers()) {
    if (auto* d = std::get_if<DenseLayer>(&l)) {
      w.u8(kDense);
      w.u64(d->in_dim());
      w.u64(d->out_dim());
      w.scalars(d->weights.values());
      w.scalars(d->bias);
    } else if (auto* b = std::get_if<BatchNormLayer>(&l)) {
      w.u8(kBatchNorm);
      w.u64(b->dim());
      w.f64(b->momentum);
      w.f64(b->epsilon);
      w.scalars(b->gamma);
      w.scalars(b->beta);
      w.scalars(b->running_mean);
      w.scalars(b->running_var);
    } else if (auto* dr = std::get_if<DropoutLayer>(&l)) {
      w.u8(kDropout);
      w.f64(dr->rate);
    } else if (auto* a = std::get_if<ActivationLayer>(&l)) {
      w.u8(kActivation);
      w.u8(static_cast<std::uint8_t>(a->kind));
      w.f64(a->alpha);
    } else if (std::holds_alternative<ResidualBegin>(l)) {
      w.u8(kResidualBegin);
    } else {
      w.u8(kResidualEnd);
    }
  }
  return w.finish();
}

Mlp deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 + 4 + 1 + 8 + 4 + 8) throw DataError("checkpoint: file too short");
  const auto body = bytes.first(bytes.size() - 8);
  Reader tail(bytes.last(8));
  if (tail.u64() != fnv1a64(body)) throw DataError("checkpoint: checksum mismatch");

  Reader r(body);
  if (r.u8() != 'L' || r.u8() != 'C' || r.u8() != 'P' || r.u8() != 'N')
    throw DataError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const int sb = r.u8();
  if (sb != 4 && sb != 8) throw DataError("checkpoint: bad scalar width");
  const std::size_t input_dim = r.count(r.u64());
  const std::uint32_t n_layers = r.u32();

  std::vector<Layer> layers;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    switch (r.u8()) {
      case kDense: {
        DenseLayer d;
        const std::size_t in = r.count(r.u64());
        const std::size_t out = r.count(r.u64());
        d.weights.resize(in, out);
        d.bias.assign(out, 0.0);
        r.scalars(sb, d.weights.values());
        r.scalars(sb, d.bias);
        d.weight_grad.resize(in, out);
        d.bias_grad.assign(out, 0.0);
        layers.emplace_back(std::move(d));
        break;
      }
      case kBatchNorm: {
        BatchNormLayer b;
        const std::size_t dim = r.count(r.u64());
        b.momentum = r.f64();
        b.epsilon = r.f64();
        for (auto* v : {&b.gamma, &b.beta, &b.running_mean, &b.running_var}) {
          v->assign(dim, 0.0);
          r.scalars(sb, *v);
        }
        b.gamma_grad.assign(dim, 0.0);
        b.beta_grad.assign(dim, 0.0);
        layers.emplace_back(std::move(b));
        break;
      }
      case kDropout:
        layers.emplace_back(DropoutLayer{r.f64(), {}});
        break;
      case kActivation: {
        ActivationLayer a;
        const auto kind = r.u8();
        if (kind > static_cast<std::uint8_t>(Activation::softplus))
          throw DataError("checkpoint: unknown activation");
        a.kind = static_cast<Activation>(kind);
        a.alpha = r.f64();
        layers.emplace_back(std::move(a));
        break;
      }
      case kResidualBegin:
        layers.emplace_back(ResidualBegin{});
        break;
      case kResidualEnd:
        layers.emplace_back(ResidualEnd{});
        break;
      default:
        throw DataError("checkpoint: unknown layer tag");
    }
  }
  try {
    return Mlp::from_layers(input_dim, std::move(layers));
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Mlp& net, const std::string& path) {
  const auto bytes = serialize(net);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

Mlp load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace lcp::nn
