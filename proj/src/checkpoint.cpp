#include "sudokusens/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "sudokusens/dataset_io.hpp"

namespace sudoku {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'S', 'S', 'C', 'K', 'P', 'T', '0', '1'};
}

void Checkpoint::set_params(const nn::ParamStore<float>& store) {
  tensors.clear();
  for (const auto& name : store.order)
    tensors.emplace_back(name, store.at(name));
}

nn::ParamStore<float> Checkpoint::params() const {
  nn::ParamStore<float> store;
  for (const auto& [name, t] : tensors)
    store.create(name, t.shape) = t;
  return store;
}

const Tensor<float>& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw std::out_of_range("checkpoint has no tensor: " + name);
}

void Checkpoint::save(const std::string& path) const {
  json index = json::array();
  uint64_t offset = 0; // in floats
  for (const auto& [name, t] : tensors) {
    index.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset},
                     {"len", t.numel()}});
    offset += static_cast<uint64_t>(t.numel());
  }
  json header = {{"kind", kind},
                 {"config", config},
                 {"training", training},
                 {"schema_hash", schema_hash},
                 {"config_hash", config_hash},
                 {"tensors", index}};
  const std::string htext = header.dump();

  std::string buf;
  buf.reserve(sizeof kMagic + 8 + htext.size() + offset * sizeof(float));
  buf.append(kMagic, sizeof kMagic);
  const uint64_t hlen = htext.size();
  buf.append(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  buf.append(htext);
  for (const auto& [name, t] : tensors)
    buf.append(reinterpret_cast<const char*>(t.data.data()),
               t.data.size() * sizeof(float));
  io::atomic_write(path, buf.data(), buf.size());
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  const json header = json::parse(htext);

  Checkpoint ck;
  ck.kind = header.at("kind").get<std::string>();
  ck.config = header.at("config");
  ck.training = header.at("training");
  ck.schema_hash = header.at("schema_hash").get<uint64_t>();
  ck.config_hash = header.at("config_hash").get<uint64_t>();
  for (const auto& e : header.at("tensors")) {
    Tensor<float> t(e.at("shape").get<std::vector<int64_t>>(), 0.0f);
    if (t.numel() != e.at("len").get<int64_t>())
      throw std::runtime_error("tensor index corrupt in " + path);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated tensor blob in " + path);
    ck.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

} // namespace sudoku
