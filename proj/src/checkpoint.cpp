#include "polyloop/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "polyloop/errors.hpp"

namespace polyloop::nn {

using json = nlohmann::json;

namespace {

std::map<std::string, torch::Tensor> named_state(const torch::nn::Module& module) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : module.named_parameters(true)) out[p.key()] = p.value();
  for (const auto& b : module.named_buffers(true)) out[b.key()] = b.value();
  return out;
}

std::string dtype_name(torch::Dtype d) {
  if (d == torch::kFloat32) return "f32";
  if (d == torch::kFloat64) return "f64";
  if (d == torch::kInt64) return "i64";
  throw CheckpointError("unsupported tensor dtype");
}

torch::Dtype dtype_from(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  throw CheckpointError("unknown dtype '" + s + "'");
}

struct RawHeader {
  json header;
  std::uint64_t data_start = 0;
};

RawHeader read_raw(std::ifstream& in, const std::filesystem::path& path) {
  std::string tag;
  std::getline(in, tag);
  if (tag != kCheckpointFormat) {
    throw CheckpointError(path.string() + ": not a " + std::string(kCheckpointFormat) + " file");
  }
  unsigned char len_bytes[8];
  in.read(reinterpret_cast<char*>(len_bytes), 8);
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | len_bytes[i];
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError(path.string() + ": truncated header");
  RawHeader raw;
  try {
    raw.header = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": bad header: " + e.what());
  }
  raw.data_start = static_cast<std::uint64_t>(in.tellg());
  return raw;
}

std::ifstream open_checked(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw PrerequisiteMissing("checkpoint " + path.string() + " does not exist");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return in;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& module,
                     const CheckpointHeader& header) {
  const auto state = named_state(module);
  json tensors = json::array();
  std::vector<torch::Tensor> payload;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : state) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    const std::uint64_t bytes = static_cast<std::uint64_t>(c.numel()) * c.element_size();
    tensors.push_back({{"name", name},
                       {"dtype", dtype_name(c.scalar_type())},
                       {"shape", c.sizes().vec()},
                       {"offset", offset},
                       {"bytes", bytes}});
    offset += bytes;
    payload.push_back(c);
  }
  const json h = {{"format", kCheckpointFormat},
                  {"kind", header.kind},
                  {"config", header.config},
                  {"meta", header.meta.is_null() ? json::object() : header.meta},
                  {"tensors", tensors}};
  const std::string text = h.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out << kCheckpointFormat << '\n';
    std::uint64_t len = text.size();
    unsigned char len_bytes[8];
    for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(len_bytes), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : payload) {
      out.write(static_cast<const char*>(t.data_ptr()),
                static_cast<std::streamsize>(t.numel() * t.element_size()));
    }
    if (!out) throw CheckpointError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  auto in = open_checked(path);
  const auto raw = read_raw(in, path);
  return {raw.header.value("kind", ""), raw.header.value("config", json::object()),
          raw.header.value("meta", json::object())};
}

CheckpointHeader load_checkpoint(const std::filesystem::path& path, torch::nn::Module& module,
                                 const std::string& expected_kind) {
  auto in = open_checked(path);
  const auto raw = read_raw(in, path);
  const CheckpointHeader header{raw.header.value("kind", ""),
                                raw.header.value("config", json::object()),
                                raw.header.value("meta", json::object())};
  if (header.kind != expected_kind) {
    throw CheckpointError(path.string() + ": holds a '" + header.kind + "', expected '" +
                          expected_kind + "'");
  }
  auto state = named_state(module);
  std::size_t matched = 0;
  torch::NoGradGuard no_grad;
  for (const auto& entry : raw.header.at("tensors")) {
    const std::string name = entry.at("name");
    auto it = state.find(name);
    if (it == state.end()) throw CheckpointError(path.string() + ": unexpected tensor " + name);
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    if (it->second.sizes().vec() != shape) {
      throw CheckpointError(path.string() + ": shape mismatch for " + name);
    }
    const std::uint64_t bytes = entry.at("bytes");
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(entry.at("dtype"))));
    if (static_cast<std::uint64_t>(t.numel() * t.element_size()) != bytes) {
      throw CheckpointError(path.string() + ": size mismatch for " + name);
    }
    in.seekg(static_cast<std::streamoff>(raw.data_start + entry.at("offset").get<std::uint64_t>()));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(bytes));
    if (!in) throw CheckpointError(path.string() + ": truncated data for " + name);
    it->second.copy_(t);
    ++matched;
  }
  if (matched != state.size()) {
    throw CheckpointError(path.string() + ": missing " + std::to_string(state.size() - matched) +
                          " tensors");
  }
  return header;
}

void copy_state(const torch::nn::Module& src, torch::nn::Module& dst) {
  const auto from = named_state(src);
  auto to = named_state(dst);
  torch::NoGradGuard no_grad;
  for (auto& [name, t] : to) {
    auto it = from.find(name);
    if (it == from.end() || it->second.sizes() != t.sizes()) {
      throw ShapeMismatch("copy_state: no matching tensor for " + name);
    }
    t.copy_(it->second);
  }
}

}  // namespace polyloop::nn
