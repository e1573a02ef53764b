#include "sudokusens/dataset_io.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "sudokusens/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "disk format is little-endian");

namespace sudoku::io {

namespace fs = std::filesystem;
using nlohmann::json;

void atomic_write(const std::string& path, const void* data, size_t bytes) {
  fs::create_directories(fs::path(path).parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + tmp);
    out.write(static_cast<const char*>(data),
              static_cast<std::streamsize>(bytes));
    if (!out) throw std::runtime_error("short write: " + tmp);
  }
  fs::rename(tmp, path);
}

void atomic_write_text(const std::string& path, const std::string& text) {
  atomic_write(path, text.data(), text.size());
}

std::vector<float> read_f32(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open: " + path);
  const auto bytes = static_cast<size_t>(in.tellg());
  if (bytes % sizeof(float) != 0)
    throw std::runtime_error("file size not a multiple of 4: " + path);
  std::vector<float> v(bytes / sizeof(float));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(bytes));
  if (!in) throw std::runtime_error("short read: " + path);
  return v;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

uint64_t schema_hash(const Dataset& ds) {
  std::string repr = "class=" + ds.class_attribute + ";";
  for (const auto& [name, values] : ds.schema.attributes) {
    repr += name + ":";
    for (const auto& v : values) repr += v + ",";
    repr += ";";
  }
  for (const auto& m : ds.modality_spec)
    repr += m.name + "@" + std::to_string(m.sample_rate_hz) + ";";
  return detail::fnv1a(repr);
}

namespace {

std::string session_file(size_t session, size_t modality) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "s%06zu_m%02zu.f32", session, modality);
  return buf;
}

} // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
  ds.validate();
  fs::create_directories(dir);

  json schema = json::array();
  for (const auto& [name, values] : ds.schema.attributes)
    schema.push_back({{"name", name}, {"values", values}});
  json mods = json::array();
  for (const auto& m : ds.modality_spec)
    mods.push_back({{"name", m.name}, {"sample_rate_hz", m.sample_rate_hz}});

  json sessions = json::array();
  for (size_t si = 0; si < ds.sessions.size(); ++si) {
    const auto& s = ds.sessions[si];
    json files = json::array();
    for (size_t mi = 0; mi < ds.modality_spec.size(); ++mi) {
      const size_t len = s.samples.empty() ? 0 : s.samples[0].per_modality[mi].size();
      std::vector<float> flat;
      flat.reserve(s.samples.size() * len);
      for (const auto& smp : s.samples) {
        if (smp.per_modality[mi].size() != len)
          throw std::invalid_argument(
              "session " + s.session_id +
              ": ragged sample lengths cannot be saved");
        flat.insert(flat.end(), smp.per_modality[mi].begin(),
                    smp.per_modality[mi].end());
      }
      const std::string fname = session_file(si, mi);
      atomic_write(dir + "/" + fname, flat.data(), flat.size() * sizeof(float));
      files.push_back({{"modality", ds.modality_spec[mi].name},
                       {"file", fname},
                       {"shape", {s.samples.size(), len}},
                       {"dtype", "float32-le"}});
    }
    std::vector<int64_t> stamps;
    for (const auto& smp : s.samples) stamps.push_back(smp.timestamp_index);
    sessions.push_back({{"id", s.session_id},
                        {"class", s.class_label},
                        {"condition", s.condition.values},
                        {"timestamps", stamps},
                        {"files", files}});
  }

  json manifest = {{"format", "sudokusens-dataset"},
                   {"version", 1},
                   {"class_attribute", ds.class_attribute},
                   {"schema", schema},
                   {"modalities", mods},
                   {"sessions", sessions}};
  atomic_write_text(dir + "/manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::string& dir) {
  const json manifest = json::parse(read_text(dir + "/manifest.json"));
  if (manifest.value("format", "") != "sudokusens-dataset")
    throw std::runtime_error(dir + ": not a dataset directory");

  Dataset ds;
  ds.class_attribute = manifest.at("class_attribute").get<std::string>();
  for (const auto& a : manifest.at("schema"))
    ds.schema.attributes.emplace_back(
        a.at("name").get<std::string>(),
        a.at("values").get<std::vector<std::string>>());
  for (const auto& m : manifest.at("modalities"))
    ds.modality_spec.push_back({m.at("name").get<std::string>(),
                                m.at("sample_rate_hz").get<double>()});

  for (const auto& s : manifest.at("sessions")) {
    Session sess;
    sess.session_id = s.at("id").get<std::string>();
    sess.class_label = s.at("class").get<std::string>();
    sess.condition.values = s.at("condition").get<std::vector<std::string>>();
    const auto stamps = s.at("timestamps").get<std::vector<int64_t>>();
    sess.samples.resize(stamps.size());
    for (size_t i = 0; i < stamps.size(); ++i) {
      sess.samples[i].timestamp_index = stamps[i];
      sess.samples[i].per_modality.resize(ds.modality_spec.size());
    }
    for (size_t mi = 0; mi < ds.modality_spec.size(); ++mi) {
      const auto& f = s.at("files").at(mi);
      if (f.at("dtype").get<std::string>() != "float32-le")
        throw std::runtime_error("unsupported dtype in " + dir);
      const auto shape = f.at("shape").get<std::vector<size_t>>();
      if (shape.size() != 2 || shape[0] != stamps.size())
        throw std::runtime_error("bad shape in manifest for session " +
                                 sess.session_id);
      auto flat = read_f32(dir + "/" + f.at("file").get<std::string>());
      if (flat.size() != shape[0] * shape[1])
        throw std::runtime_error("file size mismatch for session " +
                                 sess.session_id);
      for (size_t i = 0; i < shape[0]; ++i)
        sess.samples[i].per_modality[mi].assign(
            flat.begin() + static_cast<int64_t>(i * shape[1]),
            flat.begin() + static_cast<int64_t>((i + 1) * shape[1]));
    }
    ds.sessions.push_back(std::move(sess));
  }
  ds.validate();
  return ds;
}

namespace {

std::string cache_dir(const std::string& dir, const StftConfig& cfg) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(cfg.hash()));
  return dir + "/stft/" + buf;
}

} // namespace

void save_stft_cache(const Dataset& ds, const std::string& dir,
                     const StftConfig& cfg) {
  const std::string cdir = cache_dir(dir, cfg);
  fs::create_directories(cdir);

  json per_modality = json::array();
  std::vector<int64_t> counts;
  for (size_t si = 0; si < ds.sessions.size(); ++si) {
    const auto& s = ds.sessions[si];
    counts.push_back(static_cast<int64_t>(s.samples.size()));
    std::vector<std::vector<float>> flat(ds.modality_spec.size());
    for (const auto& smp : s.samples) {
      auto sp = compute_stft(smp, ds.modality_spec, cfg);
      if (si == 0 && per_modality.empty())
        for (const auto& m : sp.per_modality)
          per_modality.push_back({{"f", m.f()},
                                  {"t", m.t()},
                                  {"fr", m.fr()},
                                  {"seconds_per_frame", m.seconds_per_frame},
                                  {"hz_per_bin", m.hz_per_bin}});
      for (size_t mi = 0; mi < sp.per_modality.size(); ++mi) {
        const auto& d = sp.per_modality[mi].data.data;
        flat[mi].insert(flat[mi].end(), d.begin(), d.end());
      }
    }
    for (size_t mi = 0; mi < flat.size(); ++mi)
      atomic_write(cdir + "/" + session_file(si, mi), flat[mi].data(),
                   flat[mi].size() * sizeof(float));
  }

  json index = {{"format", "sudokusens-stft-cache"},
                {"stft", cfg.to_string()},
                {"per_modality", per_modality},
                {"counts", counts}};
  atomic_write_text(cdir + "/index.json", index.dump(2) + "\n");
}

bool has_stft_cache(const std::string& dir, const StftConfig& cfg) {
  return fs::exists(cache_dir(dir, cfg) + "/index.json");
}

std::vector<std::vector<Spectrogram>> load_stft_cache(const Dataset& ds,
                                                      const std::string& dir,
                                                      const StftConfig& cfg) {
  const std::string cdir = cache_dir(dir, cfg);
  const json index = json::parse(read_text(cdir + "/index.json"));
  if (index.value("stft", "") != cfg.to_string())
    throw std::runtime_error("stft cache is stale: " + cdir);
  const auto counts = index.at("counts").get<std::vector<int64_t>>();
  if (counts.size() != ds.sessions.size())
    throw std::runtime_error("stft cache session count mismatch: " + cdir);

  std::vector<std::vector<Spectrogram>> out(ds.sessions.size());
  for (size_t si = 0; si < ds.sessions.size(); ++si) {
    if (counts[si] != static_cast<int64_t>(ds.sessions[si].samples.size()))
      throw std::runtime_error("stft cache sample count mismatch: " + cdir);
    out[si].resize(static_cast<size_t>(counts[si]));
    for (size_t mi = 0; mi < ds.modality_spec.size(); ++mi) {
      const auto& meta = index.at("per_modality").at(mi);
      const int64_t f = meta.at("f").get<int64_t>();
      const int64_t t = meta.at("t").get<int64_t>();
      const int64_t fr = meta.at("fr").get<int64_t>();
      const auto plane = static_cast<size_t>(f * t * fr);
      auto flat = read_f32(cdir + "/" + session_file(si, mi));
      if (flat.size() != plane * static_cast<size_t>(counts[si]))
        throw std::runtime_error("stft cache file size mismatch: " + cdir);
      for (size_t k = 0; k < out[si].size(); ++k) {
        ModalitySpectrogram m;
        m.data = Tensor<float>::zeros({f, t, fr});
        std::copy(flat.begin() + static_cast<int64_t>(k * plane),
                  flat.begin() + static_cast<int64_t>((k + 1) * plane),
                  m.data.data.begin());
        m.seconds_per_frame = meta.at("seconds_per_frame").get<double>();
        m.hz_per_bin = meta.at("hz_per_bin").get<double>();
        if (out[si][k].per_modality.size() <= mi)
          out[si][k].per_modality.resize(ds.modality_spec.size());
        out[si][k].per_modality[mi] = std::move(m);
      }
    }
  }
  return out;
}

void save_featureset(const FeatureSet& fs, const std::string& dir,
                     uint64_t config_hash) {
  if (fs.size() == 0)
    throw std::invalid_argument("save_featureset: empty feature set");
  fs::create_directories(dir);

  json schema = json::array();
  for (const auto& [name, values] : fs.schema.attributes)
    schema.push_back({{"name", name}, {"values", values}});

  json mods = json::array();
  for (size_t mi = 0; mi < fs.per_modality.size(); ++mi) {
    const auto& t = fs.per_modality[mi];
    const std::string fname = "features_m" + std::to_string(mi) + ".f32";
    atomic_write(dir + "/" + fname, t.data.data(),
                 t.data.size() * sizeof(float));
    mods.push_back({{"name", fs.modality_names[mi]},
                    {"file", fname},
                    {"shape", t.shape},
                    {"seconds_per_frame", fs.seconds_per_frame[mi]},
                    {"hz_per_bin", fs.hz_per_bin[mi]},
                    {"dtype", "float32-le"}});
  }

  json conds = json::array();
  for (const auto& c : fs.conditions) conds.push_back(c.values);

  json manifest = {{"format", "sudokusens-features"},
                   {"version", 1},
                   {"config_hash", config_hash},
                   {"class_attribute", fs.class_attribute},
                   {"schema", schema},
                   {"modalities", mods},
                   {"sessions", fs.sessions},
                   {"labels", fs.labels},
                   {"session_index", fs.session_index},
                   {"conditions", conds}};
  atomic_write_text(dir + "/manifest.json", manifest.dump(2) + "\n");
}

FeatureSet load_featureset(const std::string& dir, uint64_t* config_hash) {
  const json manifest = json::parse(read_text(dir + "/manifest.json"));
  if (manifest.value("format", "") != "sudokusens-features")
    throw std::runtime_error(dir + ": not a feature directory");
  if (config_hash) *config_hash = manifest.at("config_hash").get<uint64_t>();

  FeatureSet fs;
  fs.class_attribute = manifest.at("class_attribute").get<std::string>();
  for (const auto& a : manifest.at("schema"))
    fs.schema.attributes.emplace_back(
        a.at("name").get<std::string>(),
        a.at("values").get<std::vector<std::string>>());
  fs.sessions = manifest.at("sessions").get<std::vector<std::string>>();
  fs.labels = manifest.at("labels").get<std::vector<int64_t>>();
  fs.session_index =
      manifest.at("session_index").get<std::vector<int64_t>>();
  for (const auto& c : manifest.at("conditions")) {
    ConditionVector cv;
    cv.values = c.get<std::vector<std::string>>();
    fs.conditions.push_back(std::move(cv));
  }

  for (const auto& m : manifest.at("modalities")) {
    fs.modality_names.push_back(m.at("name").get<std::string>());
    fs.seconds_per_frame.push_back(m.at("seconds_per_frame").get<double>());
    fs.hz_per_bin.push_back(m.at("hz_per_bin").get<double>());
    const auto shape = m.at("shape").get<std::vector<int64_t>>();
    if (shape.size() != 4)
      throw std::runtime_error(dir + ": feature stack must be rank 4");
    auto flat = read_f32(dir + "/" + m.at("file").get<std::string>());
    Tensor<float> t(shape);
    if (flat.size() != t.data.size())
      throw std::runtime_error(dir + ": feature file size mismatch");
    t.data = std::move(flat);
    fs.per_modality.push_back(std::move(t));
  }

  const auto n = static_cast<size_t>(fs.size());
  if (fs.labels.size() != n || fs.session_index.size() != n ||
      fs.conditions.size() != n)
    throw std::runtime_error(dir + ": feature row metadata mismatch");
  return fs;
}

} // namespace sudoku::io
