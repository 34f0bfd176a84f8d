#include "handteleop/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "handteleop/errors.hpp"
#include "handteleop/io.hpp"
#include "handteleop/json_io.hpp"

namespace handteleop::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Tensor;

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'H', 'T', 'B', '1'};

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::ifstream& in, const fs::path& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw FormatError("truncated blob " + path.string());
  return v;
}

json shape_json(const std::vector<int>& shape) { return json(shape); }

std::uint64_t parse_hash(const std::string& text) {
  std::uint64_t v = 0;
  if (std::sscanf(text.c_str(), "%lx", &v) != 1) throw FormatError("bad architecture hash '" + text + "'");
  return v;
}

void read_into(const fs::path& path, const std::string& expect_name, Tensor<float>& target) {
  std::string name;
  auto t = read_blob(path, name);
  if (name != expect_name) throw FormatError("blob " + path.string() + " holds '" + name + "', expected '" + expect_name + "'");
  if (t.shape != target.shape)
    throw FormatError("blob '" + name + "' has shape " + nn::shape_string(t.shape) + ", model expects " +
                      nn::shape_string(target.shape));
  target = std::move(t);
}

}  // namespace

std::string hash_string(std::uint64_t hash) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016lx", static_cast<unsigned long>(hash));
  return buf;
}

void write_blob(const fs::path& path, const std::string& name, const Tensor<float>& tensor) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<std::uint32_t>(tensor.shape.size()));
  for (int d : tensor.shape) put_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(tensor.data.data()), static_cast<std::streamsize>(tensor.size() * sizeof(float)));
  if (!out) throw Error("write failed: " + path.string());
}

Tensor<float> read_blob(const fs::path& path, std::string& name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("missing blob " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a tensor blob: " + path.string());
  const auto len = get_u32(in, path);
  if (len > 4096) throw FormatError("implausible name length in " + path.string());
  name.assign(len, '\0');
  if (!in.read(name.data(), len)) throw FormatError("truncated blob " + path.string());
  const auto rank = get_u32(in, path);
  if (rank > 8) throw FormatError("implausible rank in " + path.string());
  std::vector<int> shape(rank);
  for (auto& d : shape) d = static_cast<int>(get_u32(in, path));
  Tensor<float> t(shape);
  if (!in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(float))))
    throw FormatError("truncated blob " + path.string());
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + path.string());
  return t;
}

void save(const fs::path& dir, const SaveRequest& request) {
  if (!request.network) throw ContractError("checkpoint save without a network");
  const auto& net = *request.network;
  std::error_code ec;
  fs::create_directories(dir / "params", ec);
  fs::create_directories(dir / "buffers", ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  fs::remove(dir / "manifest.json", ec);

  json params = json::array(), buffers = json::array();
  for (const auto* p : net.parameters()) {
    const std::string file = "params/" + p->name + ".bin";
    write_blob(dir / file, p->name, p->value);
    params.push_back({{"name", p->name}, {"file", file}, {"shape", shape_json(p->value.shape)}});
  }
  for (const auto* b : net.buffers()) {
    const std::string file = "buffers/" + b->name + ".bin";
    write_blob(dir / file, b->name, b->value);
    buffers.push_back({{"name", b->name}, {"file", file}, {"shape", shape_json(b->value.shape)}});
  }

  json m;
  m["format"] = "handteleop-checkpoint";
  m["format_version"] = kFormatVersion;
  m["architecture_hash"] = hash_string(net.architecture_hash());
  m["architecture"] = model::to_json(net.arch());
  m["variant"] = std::string(model::to_string(net.variant()));
  m["step"] = request.step;
  m["seed"] = request.seed;
  m["parameters"] = params;
  m["buffers"] = buffers;
  m["train_config"] = request.train_config;
  if (request.adam) {
    const auto& a = *request.adam;
    const auto ps = net.parameters();
    if (a.m.size() != ps.size() || a.v.size() != ps.size()) throw ContractError("optimizer state does not match the network");
    fs::create_directories(dir / "adam" / "m", ec);
    fs::create_directories(dir / "adam" / "v", ec);
    if (ec) throw Error("cannot create " + (dir / "adam").string() + ": " + ec.message());
    for (std::size_t i = 0; i < ps.size(); ++i) {
      write_blob(dir / "adam" / "m" / (ps[i]->name + ".bin"), ps[i]->name, a.m[i]);
      write_blob(dir / "adam" / "v" / (ps[i]->name + ".bin"), ps[i]->name, a.v[i]);
    }
    m["optimizer"] = {{"type", "adam"},
                      {"step", a.step},
                      {"learning_rate", a.settings.learning_rate},
                      {"beta1", a.settings.beta1},
                      {"beta2", a.settings.beta2},
                      {"epsilon", a.settings.epsilon}};
  } else {
    m["optimizer"] = nullptr;
  }
  io::write_text(dir / "manifest.json", m.dump(2) + "\n");
}

json read_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) throw IntegrityError("no checkpoint manifest at " + path.string());
  json m;
  try {
    m = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint manifest " + path.string() + ": " + e.what());
  }
  if (!m.is_object() || m.value("format", "") != "handteleop-checkpoint")
    throw FormatError(path.string() + " is not a checkpoint manifest");
  if (m.value("format_version", -1) != kFormatVersion)
    throw FormatError("unsupported checkpoint format version in " + path.string());
  return m;
}

Checkpoint load(const fs::path& dir) {
  const json m = read_manifest(dir);
  model::ArchConfig arch;
  model::Variant variant;
  std::uint64_t stored_hash = 0;
  try {
    arch = model::arch_from_json(m.at("architecture"));
    variant = model::parse_variant(m.at("variant").get<std::string>());
    stored_hash = parse_hash(m.at("architecture_hash").get<std::string>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  if (model::architecture_hash(arch, variant) != stored_hash)
    throw FormatError("checkpoint architecture hash does not match its architecture description");

  Checkpoint c{m.value("step", std::int64_t{0}), m.value("seed", std::uint64_t{0}), m.value("train_config", json()),
               model::Network<float>(arch, variant, 0), std::nullopt};
  for (auto* p : c.network.parameters()) read_into(dir / "params" / (p->name + ".bin"), p->name, p->value);
  for (auto* b : c.network.buffers()) read_into(dir / "buffers" / (b->name + ".bin"), b->name, b->value);

  if (m.contains("optimizer") && m["optimizer"].is_object()) {
    const auto& o = m["optimizer"];
    AdamState a;
    try {
      a.step = o.at("step").get<std::int64_t>();
      a.settings = {o.at("learning_rate").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                    o.at("epsilon").get<double>()};
    } catch (const json::exception& e) {
      throw FormatError(std::string("checkpoint optimizer: ") + e.what());
    }
    for (const auto* p : c.network.parameters()) {
      a.m.emplace_back(p->value.shape);
      a.v.emplace_back(p->value.shape);
      read_into(dir / "adam" / "m" / (p->name + ".bin"), p->name, a.m.back());
      read_into(dir / "adam" / "v" / (p->name + ".bin"), p->name, a.v.back());
    }
    c.adam = std::move(a);
  }
  return c;
}

Checkpoint load(const fs::path& dir, std::uint64_t expected_hash) {
  const json m = read_manifest(dir);
  const std::string stored = m.value("architecture_hash", "");
  if (stored != hash_string(expected_hash))
    throw IncompatibleCheckpoint("checkpoint " + dir.string() + " has architecture " + stored + " (" +
                                 m.value("variant", "?") + "), expected " + hash_string(expected_hash));
  return load(dir);
}

}  // namespace handteleop::checkpoint
