#pragma once

// Disk formats. A dataset directory holds manifest.json plus one raw
// little-endian float32 file per session per modality (row-major
// [n_samples, len]); the stft/ subtree caches spectrograms keyed by the
// StftConfig hash. All writes are atomic (write temp, then rename).

#include <cstdint>
#include <string>
#include <vector>

#include "sudokusens/datamodel.hpp"
#include "sudokusens/features.hpp"
#include "sudokusens/pipeline.hpp"

namespace sudoku::io {

void atomic_write(const std::string& path, const void* data, size_t bytes);
void atomic_write_text(const std::string& path, const std::string& text);

std::vector<float> read_f32(const std::string& path);
std::string read_text(const std::string& path);

// Stable hash of schema + modality spec, embedded in artifacts so stages
// can refuse data they were not built for.
uint64_t schema_hash(const Dataset& ds);

// Requires every session's samples to share one length per modality (true
// for raw and segmented pipeline datasets); throws otherwise.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Spectrogram cache under <dir>/stft/<config-hash>/.
void save_stft_cache(const Dataset& ds, const std::string& dir,
                     const StftConfig& cfg);
bool has_stft_cache(const std::string& dir, const StftConfig& cfg);
// per session, per sample spectrograms; throws when absent or hash-stale
std::vector<std::vector<Spectrogram>> load_stft_cache(const Dataset& ds,
                                                      const std::string& dir,
                                                      const StftConfig& cfg);

// Model-ready feature directory (manifest.json plus one row-major float32
// stack per modality). config_hash marks the producing run config so later
// stages can refuse foreign artifacts.
void save_featureset(const FeatureSet& fs, const std::string& dir,
                     uint64_t config_hash);
FeatureSet load_featureset(const std::string& dir,
                           uint64_t* config_hash = nullptr);

} // namespace sudoku::io
