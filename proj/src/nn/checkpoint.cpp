#include "hitmdp/nn/checkpoint.h"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace hitmdp::nn {

namespace {

void put_le(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::size_t numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

}  // namespace

void save_tensors(const std::string& stem, const std::vector<NamedTensor>& tensors,
                  const std::vector<int>& layer_sizes,
                  const std::vector<std::string>& activations) {
  nlohmann::json manifest;
  manifest["layer_sizes"] = layer_sizes;
  manifest["activations"] = activations;
  manifest["tensors"] = nlohmann::json::array();
  std::ofstream blob(stem + ".bin", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot write " + stem + ".bin");
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    if (numel(t.shape) != t.values.size())
      throw std::invalid_argument("save_tensors: shape of " + t.name + " does not match values");
    manifest["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    for (double v : t.values) put_le(blob, v);
    offset += t.values.size() * 8;
  }
  std::ofstream js(stem + ".json");
  if (!js) throw std::runtime_error("cannot write " + stem + ".json");
  js << manifest.dump(2) << "\n";
}

std::vector<NamedTensor> load_tensors(const std::string& stem, nlohmann::json* manifest_out) {
  std::ifstream js(stem + ".json");
  if (!js) throw std::runtime_error("cannot open " + stem + ".json");
  nlohmann::json manifest = nlohmann::json::parse(js);
  std::ifstream blob(stem + ".bin", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open " + stem + ".bin");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob)),
                                   std::istreambuf_iterator<char>());
  std::vector<NamedTensor> out;
  for (const auto& t : manifest.at("tensors")) {
    NamedTensor nt;
    nt.name = t.at("name").get<std::string>();
    nt.shape = t.at("shape").get<std::vector<int>>();
    std::size_t off = t.at("offset").get<std::size_t>();
    std::size_t n = numel(nt.shape);
    if (off + 8 * n > bytes.size())
      throw std::runtime_error("checkpoint blob too short for " + nt.name);
    nt.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) nt.values[i] = get_le(bytes.data() + off + 8 * i);
    out.push_back(std::move(nt));
  }
  if (manifest_out) *manifest_out = std::move(manifest);
  return out;
}

std::vector<NamedTensor> net_tensors(const DenseNet& net) {
  std::vector<NamedTensor> out;
  for (int l = 0; l < net.n_layers(); ++l) {
    auto w = net.weight(l);
    NamedTensor tw{"layer" + std::to_string(l) + ".weight",
                   {static_cast<int>(w.rows()), static_cast<int>(w.cols())}, {}};
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) tw.values.push_back(w(i, j));
    auto b = net.bias(l);
    NamedTensor tb{"layer" + std::to_string(l) + ".bias", {static_cast<int>(b.size())},
                   std::vector<double>(b.data(), b.data() + b.size())};
    out.push_back(std::move(tw));
    out.push_back(std::move(tb));
  }
  return out;
}

void save_net(const std::string& stem, const DenseNet& net) {
  std::vector<std::string> acts;
  for (Activation a : net.activations()) acts.push_back(to_string(a));
  save_tensors(stem, net_tensors(net), net.layer_sizes(), acts);
}

DenseNet load_net(const std::string& stem) {
  nlohmann::json manifest;
  auto tensors = load_tensors(stem, &manifest);
  auto sizes = manifest.at("layer_sizes").get<std::vector<int>>();
  std::vector<Activation> acts;
  for (const auto& a : manifest.at("activations")) acts.push_back(activation_from_string(a));
  DenseNet net(sizes, acts, 0);
  if (tensors.size() != 2 * acts.size())
    throw std::runtime_error("checkpoint " + stem + " has the wrong tensor count");
  for (int l = 0; l < net.n_layers(); ++l) {
    const auto& tw = tensors[2 * l];
    const auto& tb = tensors[2 * l + 1];
    auto w = net.weight(l);
    if (tw.shape != std::vector<int>{static_cast<int>(w.rows()), static_cast<int>(w.cols())})
      throw std::runtime_error("checkpoint " + stem + ": weight shape mismatch");
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = tw.values[i * w.cols() + j];
    auto b = net.bias(l);
    if (static_cast<Eigen::Index>(tb.values.size()) != b.size())
      throw std::runtime_error("checkpoint " + stem + ": bias shape mismatch");
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = tb.values[i];
  }
  return net;
}

}  // namespace hitmdp::nn
