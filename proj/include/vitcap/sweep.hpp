#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "vitcap/capacity.hpp"
#include "vitcap/dataset.hpp"
#include "vitcap/trainer.hpp"
#include "vitcap/vit.hpp"

// Grid sweeps over (heads, encoders): per point, build with a seed derived
// from (grid seed, h, t), train, and record P, Q, and the final losses.
// Cross-sections fix one axis (the figures fix it at 4) and sort by Q.

namespace vitcap {

struct SweepGrid {
  std::vector<size_t> heads{1, 2, 4};
  std::vector<size_t> encoders{1, 2, 4};
  ModelConfig base;    // heads/encoders replaced per grid point
  TrainConfig train;
  uint64_t seed = 0;   // grid seed; per-config seeds derived from (seed, h, t)
  int workers = 1;     // concurrent configs; output is schedule-independent

  void validate() const;
};

struct SweepRecord {
  size_t heads = 0;
  size_t encoders = 0;
  long long params = 0;  // P from the closed-form count
  Rational q;            // M*K/P, exact
  double final_train_loss = 0.0;
  double final_test_loss = 0.0;
  double first_train_loss = 0.0;  // epoch-1 training loss, for trend checks
  uint64_t run_seed = 0;
  bool failed = false;
  std::string error;
};

// Trains every grid point; records are sorted by (encoders, heads). A failed
// config is recorded with its error and the remaining configs still run.
// T is the training precision (the protocol default is float).
template <typename T = float>
std::vector<SweepRecord> run_sweep(const SweepGrid& grid, const ImageDataset& train_set,
                                   const ImageDataset& test_set, std::ostream* progress = nullptr);

struct CrossSection {
  char axis = 'h';   // 'h': heads fixed; 't': encoders fixed
  size_t value = 4;
  std::vector<SweepRecord> records;  // Q-ascending, failed records excluded
};

CrossSection cross_section(std::span<const SweepRecord> records, char axis, size_t value = 4);

// Header `determination loss val_loss`, one row per record, Q-ascending.
void emit_data_file(const CrossSection& section, const std::string& path);

void write_records_json(std::span<const SweepRecord> records, const std::string& path);
std::vector<SweepRecord> read_records_json(const std::string& path);

// Provenance manifest (grid, seeds, dataset digest, library version).
void write_manifest(const SweepGrid& grid, std::span<const SweepRecord> records,
                    const ImageDataset& train_set, const ImageDataset& test_set,
                    double wall_seconds, const std::string& path);

}  // namespace vitcap
