#include "oosdsd/checkpoint.hpp"

#include "oosdsd/config.hpp"
#include "oosdsd/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace oosdsd {

namespace {

constexpr char kMagic[8] = {'O', 'O', 'S', 'D', 'S', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string shape_text(const std::vector<Eigen::Index>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

template <typename Scalar>
void copy_in(nn::Parameter<Scalar>& p, const Checkpoint::Entry& e) {
  if (e.shape != p.shape || Eigen::Index(e.values.size()) != p.numel())
    throw KeyMismatchError("tensor '" + p.name + "' has shape " + shape_text(e.shape) + ", network expects " +
                           shape_text(p.shape));
  for (Eigen::Index i = 0; i < p.numel(); ++i) p.value[i] = Scalar(e.values[std::size_t(i)]);
}

} // namespace

template <typename Scalar>
Checkpoint capture(Network<Scalar>& net, nlohmann::json meta) {
  Checkpoint c;
  c.net = net.config();
  c.meta = std::move(meta);
  for (auto* p : net.parameters()) {
    Checkpoint::Entry e;
    e.shape = p->shape;
    e.values.resize(std::size_t(p->numel()));
    for (Eigen::Index i = 0; i < p->numel(); ++i) e.values[std::size_t(i)] = float(p->value[i]);
    c.tensors.emplace(p->name, std::move(e));
  }
  return c;
}

template <typename Scalar>
void restore(Network<Scalar>& net, const Checkpoint& ckpt) {
  auto named = net.named_parameters();
  for (const auto& [name, p] : named)
    if (!ckpt.tensors.count(name)) throw KeyMismatchError("checkpoint lacks tensor '" + name + "'");
  for (const auto& [name, e] : ckpt.tensors) {
    auto it = named.find(name);
    if (it == named.end()) throw KeyMismatchError("checkpoint tensor '" + name + "' is not part of the network");
    copy_in(*it->second, e);
  }
}

template <typename Scalar>
void init_parameters(Network<Scalar>& net, std::uint64_t seed, const Checkpoint* pretrained) {
  net.init_all(seed);
  if (!pretrained) return;
  for (auto& [name, p] : net.named_parameters()) {
    if (block_of(name) > kLastBackboneBlock) continue;
    auto it = pretrained->tensors.find(name);
    if (it == pretrained->tensors.end())
      throw KeyMismatchError("pretrained checkpoint lacks tensor '" + name + "' (block " +
                             std::to_string(block_of(name)) + ")");
    copy_in(*p, it->second);
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["net"] = to_json(ckpt.net);
  header["meta"] = ckpt.meta;
  nlohmann::json dir = nlohmann::json::array();
  for (const auto& [name, e] : ckpt.tensors) dir.push_back({{"name", name}, {"shape", e.shape}, {"count", e.values.size()}});
  header["tensors"] = dir;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), std::streamsize(text.size()));
    for (const auto& [name, e] : ckpt.tensors)
      out.write(reinterpret_cast<const char*>(e.values.data()), std::streamsize(e.values.size() * sizeof(float)));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw KeyMismatchError(path.string() + " is not a checkpoint file");
  if (version != kVersion) throw KeyMismatchError("unsupported checkpoint version " + std::to_string(version));
  if (len > (std::uint64_t(1) << 32)) throw KeyMismatchError("corrupt checkpoint header in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), std::streamsize(len));
  if (!in) throw KeyMismatchError("truncated checkpoint header in " + path.string());

  Checkpoint c;
  try {
    const auto header = nlohmann::json::parse(text);
    c.net = network_config_from_json(header.at("net"));
    c.meta = header.value("meta", nlohmann::json::object());
    for (const auto& t : header.at("tensors")) {
      Checkpoint::Entry e;
      e.shape = t.at("shape").get<std::vector<Eigen::Index>>();
      e.values.resize(t.at("count").get<std::size_t>());
      in.read(reinterpret_cast<char*>(e.values.data()), std::streamsize(e.values.size() * sizeof(float)));
      if (!in) throw KeyMismatchError("truncated checkpoint data in " + path.string());
      c.tensors.emplace(t.at("name").get<std::string>(), std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw KeyMismatchError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  return c;
}

template Checkpoint capture<float>(Network<float>&, nlohmann::json);
template Checkpoint capture<double>(Network<double>&, nlohmann::json);
template void restore<float>(Network<float>&, const Checkpoint&);
template void restore<double>(Network<double>&, const Checkpoint&);
template void init_parameters<float>(Network<float>&, std::uint64_t, const Checkpoint*);
template void init_parameters<double>(Network<double>&, std::uint64_t, const Checkpoint*);

} // namespace oosdsd
