#include "dlrt/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace dlrt {
namespace {

using nlohmann::json;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Row-major little-endian float64 bytes of m.
std::vector<unsigned char> to_bytes(const Matrix& m) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(m.size()) * 8);
  std::size_t pos = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      auto word = std::bit_cast<std::uint64_t>(m(i, j));
      for (int b = 0; b < 8; ++b) {
        bytes[pos++] = static_cast<unsigned char>(word >> (8 * b));
      }
    }
  }
  return bytes;
}

Matrix from_bytes(const std::vector<unsigned char>& bytes, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  std::size_t pos = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      std::uint64_t word = 0;
      for (int b = 0; b < 8; ++b) {
        word |= std::uint64_t{bytes[pos++]} << (8 * b);
      }
      m(i, j) = std::bit_cast<double>(word);
    }
  }
  return m;
}

std::uint32_t crc_of(const std::vector<unsigned char>& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large tensors.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const auto len = static_cast<uInt>(std::min(kChunk, bytes.size() - off));
    crc = crc32(crc, bytes.data() + off, len);
  }
  return static_cast<std::uint32_t>(crc);
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}

void write_bytes(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw CheckpointError("failed to write " + path.string());
  }
}

class BlobWriter {
 public:
  explicit BlobWriter(std::filesystem::path dir) : dir_(std::move(dir)) {}

  json put(const std::string& stem, const std::string& role, const Matrix& m) {
    const std::string file = stem + "_" + role + ".bin";
    const auto bytes = to_bytes(m);
    write_bytes(bytes, dir_ / file);
    return {{"role", role}, {"file", file}, {"shape", {m.rows(), m.cols()}}, {"crc32", hex32(crc_of(bytes))}};
  }

  json put(const std::string& stem, const std::string& role, const Vector& v) { return put(stem, role, Matrix(v)); }

 private:
  std::filesystem::path dir_;
};

json conv_shape_json(const ConvShape& s) {
  return {{"filters", s.filters}, {"channels", s.channels}, {"kernel_h", s.kernel_h}, {"kernel_w", s.kernel_w},
          {"stride", s.stride},   {"padding", s.padding},   {"in_h", s.in_h},         {"in_w", s.in_w}};
}

ConvShape conv_shape_from(const json& j) {
  return ConvShape{j.at("filters"), j.at("channels"), j.at("kernel_h"), j.at("kernel_w"),
                   j.at("stride"),  j.at("padding"),  j.at("in_h"),     j.at("in_w")};
}

std::string act_name(Activation a) {
  return a == Activation::kRelu ? "relu" : a == Activation::kSoftmax ? "softmax" : "identity";
}

Activation act_from(const json& j) {
  const auto name = j.at("activation").get<std::string>();
  if (name == "relu") {
    return Activation::kRelu;
  }
  if (name == "softmax") {
    return Activation::kSoftmax;
  }
  if (name == "identity") {
    return Activation::kIdentity;
  }
  throw CheckpointError("unknown activation '" + name + "' in manifest");
}

json header(const CheckpointInfo& info, const std::string& variant) {
  return {{"format", "dlrt-checkpoint"}, {"version", 1},        {"variant", variant},
          {"architecture", info.architecture}, {"seed", info.seed}, {"epoch", info.epoch},
          {"metrics", info.metrics}};
}

void write_manifest(const json& manifest, const std::filesystem::path& dir) {
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) {
    throw CheckpointError("failed to write " + (dir / "manifest.json").string());
  }
}

class BlobReader {
 public:
  BlobReader(std::filesystem::path dir, const json& tensors) : dir_(std::move(dir)) {
    for (const json& t : tensors) {
      entries_[t.at("role").get<std::string>()] = t;
    }
  }

  Matrix matrix(const std::string& role) const {
    const auto it = entries_.find(role);
    if (it == entries_.end()) {
      throw CheckpointError("manifest lacks tensor '" + role + "'");
    }
    const json& t = it->second;
    const auto path = dir_ / t.at("file").get<std::string>();
    const Eigen::Index rows = t.at("shape").at(0);
    const Eigen::Index cols = t.at("shape").at(1);
    Matrix m = read_blob(path, rows, cols);
    const std::string crc = hex32(blob_checksum(m));
    if (crc != t.at("crc32").get<std::string>()) {
      throw CheckpointError(path.string() + ": checksum mismatch (manifest " + t.at("crc32").get<std::string>() +
                            ", data " + crc + ")");
    }
    return m;
  }

  Vector vector(const std::string& role) const { return matrix(role).col(0); }

 private:
  std::filesystem::path dir_;
  std::map<std::string, json> entries_;
};

Matrix relu_or_identity(Matrix pre, Activation act) {
  if (act == Activation::kRelu) {
    pre = pre.cwiseMax(0.0);
  }
  return pre;
}

}  // namespace

void write_blob(const Matrix& m, const std::filesystem::path& path) {
  write_bytes(to_bytes(m), path);
}

Matrix read_blob(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError("cannot open " + path.string());
  }
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const auto expected = static_cast<std::size_t>(rows * cols) * 8;
  if (bytes.size() != expected) {
    throw CheckpointError(path.string() + ": holds " + std::to_string(bytes.size()) + " bytes, shape needs " +
                          std::to_string(expected));
  }
  return from_bytes(bytes, rows, cols);
}

std::uint32_t blob_checksum(const Matrix& m) { return crc_of(to_bytes(m)); }

DeployModel to_deploy(const Network& net) {
  DeployModel model;
  for (const Layer& layer : net.layers) {
    model.layers.push_back(std::visit(
        overloaded{[](const DenseLayer& l) -> DeployLayer { return l; },
                   [](const LowRankFactors& f) -> DeployLayer {
                     return DeployLowRank{f.u * f.s, f.v, f.bias, f.activation};
                   },
                   [](const ConvLayer& l) -> DeployLayer { return l; },
                   [](const LowRankConv& c) -> DeployLayer {
                     const auto& f = c.factors;
                     return DeployConv{c.shape, DeployLowRank{f.u * f.s, f.v, f.bias, f.activation}};
                   },
                   [](const MaxPool& p) -> DeployLayer { return p; }},
        layer));
  }
  return model;
}

Matrix deploy_forward(const DeployModel& model, const Matrix& inputs) {
  Matrix z = inputs;
  for (const DeployLayer& layer : model.layers) {
    z = std::visit(overloaded{[&](const DenseLayer& l) -> Matrix {
                                Matrix a = l.weight * z;
                                a.colwise() += l.bias;
                                return relu_or_identity(std::move(a), l.activation);
                              },
                              [&](const DeployLowRank& l) -> Matrix {
                                const Matrix proj = l.v.transpose() * z;
                                Matrix a = l.us * proj;
                                a.colwise() += l.bias;
                                return relu_or_identity(std::move(a), l.activation);
                              },
                              [&](const ConvLayer& l) -> Matrix {
                                Matrix a = l.weight * unfold(z, l.shape);
                                a.colwise() += l.bias;
                                return relu_or_identity(locations_to_features(a, l.shape.locations()),
                                                        l.activation);
                              },
                              [&](const DeployConv& c) -> Matrix {
                                const Matrix proj = c.factors.v.transpose() * unfold(z, c.shape);
                                Matrix a = c.factors.us * proj;
                                a.colwise() += c.factors.bias;
                                return relu_or_identity(locations_to_features(a, c.shape.locations()),
                                                        c.factors.activation);
                              },
                              [&](const MaxPool& p) -> Matrix { return max_pool_forward(z, p).out; }},
                   layer);
  }
  return z;
}

std::vector<int> layer_ranks(const DeployModel& model) {
  std::vector<int> ranks;
  for (const DeployLayer& layer : model.layers) {
    if (const auto* l = std::get_if<DeployLowRank>(&layer)) {
      ranks.push_back(static_cast<int>(l->v.cols()));
    } else if (const auto* c = std::get_if<DeployConv>(&layer)) {
      ranks.push_back(static_cast<int>(c->factors.v.cols()));
    }
  }
  return ranks;
}

void save_checkpoint(const Network& net, const CheckpointInfo& info, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  BlobWriter blobs(dir);
  json layers = json::array();
  json ranks = json::array();
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const std::string stem = "layer" + std::to_string(i);
    json entry = std::visit(
        overloaded{[&](const DenseLayer& l) -> json {
                     return {{"kind", "dense"},
                             {"activation", act_name(l.activation)},
                             {"tensors", {blobs.put(stem, "W", l.weight), blobs.put(stem, "bias", l.bias)}}};
                   },
                   [&](const LowRankFactors& f) -> json {
                     ranks.push_back(f.rank());
                     return {{"kind", "low_rank"},
                             {"activation", act_name(f.activation)},
                             {"r_min", f.r_min},
                             {"r_max", f.r_max},
                             {"tensors",
                              {blobs.put(stem, "U", f.u), blobs.put(stem, "S", f.s), blobs.put(stem, "V", f.v),
                               blobs.put(stem, "bias", f.bias)}}};
                   },
                   [&](const ConvLayer& l) -> json {
                     return {{"kind", "conv"},
                             {"activation", act_name(l.activation)},
                             {"conv", conv_shape_json(l.shape)},
                             {"tensors", {blobs.put(stem, "W", l.weight), blobs.put(stem, "bias", l.bias)}}};
                   },
                   [&](const LowRankConv& c) -> json {
                     const auto& f = c.factors;
                     ranks.push_back(f.rank());
                     return {{"kind", "low_rank_conv"},
                             {"activation", act_name(f.activation)},
                             {"conv", conv_shape_json(c.shape)},
                             {"r_min", f.r_min},
                             {"r_max", f.r_max},
                             {"tensors",
                              {blobs.put(stem, "U", f.u), blobs.put(stem, "S", f.s), blobs.put(stem, "V", f.v),
                               blobs.put(stem, "bias", f.bias)}}};
                   },
                   [&](const MaxPool& p) -> json {
                     return {{"kind", "pool"}, {"channels", p.channels}, {"in_h", p.in_h}, {"in_w", p.in_w}};
                   }},
        net.layers[i]);
    layers.push_back(entry);
  }
  json manifest = header(info, "train");
  manifest["ranks"] = ranks;
  manifest["layers"] = layers;
  write_manifest(manifest, dir);
}

void save_deploy(const DeployModel& model, const CheckpointInfo& info, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  BlobWriter blobs(dir);
  json layers = json::array();
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const std::string stem = "layer" + std::to_string(i);
    json entry = std::visit(
        overloaded{[&](const DenseLayer& l) -> json {
                     return {{"kind", "dense"},
                             {"activation", act_name(l.activation)},
                             {"tensors", {blobs.put(stem, "W", l.weight), blobs.put(stem, "bias", l.bias)}}};
                   },
                   [&](const DeployLowRank& l) -> json {
                     return {{"kind", "low_rank"},
                             {"activation", act_name(l.activation)},
                             {"tensors",
                              {blobs.put(stem, "US", l.us), blobs.put(stem, "V", l.v),
                               blobs.put(stem, "bias", l.bias)}}};
                   },
                   [&](const ConvLayer& l) -> json {
                     return {{"kind", "conv"},
                             {"activation", act_name(l.activation)},
                             {"conv", conv_shape_json(l.shape)},
                             {"tensors", {blobs.put(stem, "W", l.weight), blobs.put(stem, "bias", l.bias)}}};
                   },
                   [&](const DeployConv& c) -> json {
                     return {{"kind", "low_rank_conv"},
                             {"activation", act_name(c.factors.activation)},
                             {"conv", conv_shape_json(c.shape)},
                             {"tensors",
                              {blobs.put(stem, "US", c.factors.us), blobs.put(stem, "V", c.factors.v),
                               blobs.put(stem, "bias", c.factors.bias)}}};
                   },
                   [&](const MaxPool& p) -> json {
                     return {{"kind", "pool"}, {"channels", p.channels}, {"in_h", p.in_h}, {"in_w", p.in_w}};
                   }},
        model.layers[i]);
    layers.push_back(entry);
  }
  json manifest = header(info, "deploy");
  manifest["ranks"] = layer_ranks(model);
  manifest["layers"] = layers;
  write_manifest(manifest, dir);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    throw CheckpointError("no manifest.json in " + dir.string());
  }
  LoadedCheckpoint out;
  try {
    const json manifest = json::parse(in);
    if (manifest.value("format", "") != "dlrt-checkpoint") {
      throw CheckpointError(dir.string() + ": not a checkpoint manifest");
    }
    out.variant = manifest.at("variant").get<std::string>();
    out.info.architecture = manifest.value("architecture", "");
    out.info.seed = manifest.value("seed", std::uint64_t{0});
    out.info.epoch = manifest.value("epoch", 0);
    out.info.metrics = manifest.value("metrics", json::object());
    const bool deploy = out.variant == "deploy";
    if (!deploy && out.variant != "train") {
      throw CheckpointError("unknown checkpoint variant '" + out.variant + "'");
    }
    Network net;
    DeployModel model;
    for (const json& e : manifest.at("layers")) {
      const auto kind = e.at("kind").get<std::string>();
      if (kind == "pool") {
        const MaxPool p{e.at("channels"), e.at("in_h"), e.at("in_w")};
        if (deploy) {
          model.layers.emplace_back(p);
        } else {
          net.layers.emplace_back(p);
        }
        continue;
      }
      const BlobReader blobs(dir, e.at("tensors"));
      const Activation act = act_from(e);
      if (kind == "dense") {
        DenseLayer l{blobs.matrix("W"), blobs.vector("bias"), act};
        if (deploy) {
          model.layers.emplace_back(std::move(l));
        } else {
          net.layers.emplace_back(std::move(l));
        }
      } else if (kind == "conv") {
        ConvLayer l{conv_shape_from(e.at("conv")), blobs.matrix("W"), blobs.vector("bias"), act};
        if (deploy) {
          model.layers.emplace_back(std::move(l));
        } else {
          net.layers.emplace_back(std::move(l));
        }
      } else if (kind == "low_rank" || kind == "low_rank_conv") {
        if (deploy) {
          DeployLowRank l{blobs.matrix("US"), blobs.matrix("V"), blobs.vector("bias"), act};
          if (kind == "low_rank") {
            model.layers.emplace_back(std::move(l));
          } else {
            model.layers.emplace_back(DeployConv{conv_shape_from(e.at("conv")), std::move(l)});
          }
        } else {
          LowRankFactors f;
          f.u = blobs.matrix("U");
          f.s = blobs.matrix("S");
          f.v = blobs.matrix("V");
          f.bias = blobs.vector("bias");
          f.r_min = e.at("r_min");
          f.r_max = e.at("r_max");
          f.activation = act;
          if (kind == "low_rank") {
            net.layers.emplace_back(std::move(f));
          } else {
            net.layers.emplace_back(LowRankConv{conv_shape_from(e.at("conv")), std::move(f)});
          }
        }
      } else {
        throw CheckpointError("unknown layer kind '" + kind + "' in manifest");
      }
    }
    if (deploy) {
      out.model = std::move(model);
    } else {
      validate(net);
      out.model = std::move(net);
    }
  } catch (const json::exception& e) {
    throw CheckpointError(dir.string() + "/manifest.json: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(dir.string() + ": " + e.what());
  }
  return out;
}

Network load_network(const std::filesystem::path& dir) {
  LoadedCheckpoint ck = load_checkpoint(dir);
  if (ck.variant != "train") {
    throw CheckpointError(dir.string() + ": deploy checkpoints cannot resume training");
  }
  return std::get<Network>(std::move(ck.model));
}

}  // namespace dlrt
