#include "vitcap/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <thread>

#include "vitcap/config_json.hpp"
#include "vitcap/rng.hpp"
#include "vitcap/table.hpp"
#include "vitcap/version.hpp"

namespace vitcap {

namespace {

void validate_axis_list(const std::vector<size_t>& xs, const char* what) {
  if (xs.empty()) throw ConfigError(std::string(what) + " list must not be empty");
  for (size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] == 0) throw ConfigError(std::string(what) + " values must be positive");
    if (i > 0 && xs[i] <= xs[i - 1])
      throw ConfigError(std::string(what) + " list must be ascending and distinct");
  }
}

}  // namespace

void SweepGrid::validate() const {
  validate_axis_list(heads, "heads");
  validate_axis_list(encoders, "encoders");
  train.validate();
  if (workers < 1) throw ConfigError("sweep: workers must be at least 1");
  ModelConfig probe = base;
  probe.heads = heads.front();
  probe.encoders = encoders.front();
  probe.validate();
}

template <typename T>
std::vector<SweepRecord> run_sweep(const SweepGrid& grid, const ImageDataset& train_set,
                                   const ImageDataset& test_set, std::ostream* progress) {
  grid.validate();
  train_set.validate();
  test_set.validate();

  struct Task {
    size_t heads, encoders;
  };
  std::vector<Task> tasks;  // (t, h) order; the record order of the result
  for (const size_t t : grid.encoders)
    for (const size_t h : grid.heads) tasks.push_back({h, t});

  std::vector<SweepRecord> records(tasks.size());
  std::atomic<size_t> next{0};
  std::mutex progress_mutex;

  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task task = tasks[i];

      SweepRecord rec;
      rec.heads = task.heads;
      rec.encoders = task.encoders;
      rec.run_seed = seed_mix(grid.seed, task.heads, task.encoders);
      try {
        ModelConfig cfg = grid.base;
        cfg.heads = task.heads;
        cfg.encoders = task.encoders;
        rec.params = count_params(cfg).total;
        rec.q = determination_ratio({static_cast<long long>(train_set.class_count),
                                     static_cast<long long>(train_set.count), rec.params});

        TrainConfig tcfg = grid.train;
        tcfg.seed = rec.run_seed;
        auto model = VisionTransformer<T>::build(cfg, rec.run_seed);
        const auto metrics = train(model, train_set, test_set, tcfg);
        if (metrics.empty()) {
          rec.final_train_loss = rec.first_train_loss = evaluate(model, train_set);
          rec.final_test_loss = evaluate(model, test_set);
        } else {
          rec.first_train_loss = metrics.front().train_loss;
          rec.final_train_loss = metrics.back().train_loss;
          rec.final_test_loss = metrics.back().test_loss;
        }
      } catch (const std::exception& e) {
        rec.failed = true;
        rec.error = e.what();
      }
      if (progress) {
        const std::lock_guard<std::mutex> lock(progress_mutex);
        (*progress) << "h=" << task.heads << " t=" << task.encoders
                    << (rec.failed ? std::string(" FAILED: ") + rec.error
                                   : " train " + format_float(rec.final_train_loss) + " test " +
                                         format_float(rec.final_test_loss))
                    << '\n'
                    << std::flush;
      }
      records[i] = std::move(rec);
    }
  };

  const size_t nworkers = std::min<size_t>(size_t(grid.workers), tasks.size());
  if (nworkers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nworkers);
    for (size_t w = 0; w < nworkers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return records;
}

template std::vector<SweepRecord> run_sweep<float>(const SweepGrid&, const ImageDataset&,
                                                    const ImageDataset&, std::ostream*);
template std::vector<SweepRecord> run_sweep<double>(const SweepGrid&, const ImageDataset&,
                                                    const ImageDataset&, std::ostream*);

CrossSection cross_section(std::span<const SweepRecord> records, char axis, size_t value) {
  if (axis != 'h' && axis != 't')
    throw ConfigError("cross section: axis must be 'h' (fixed heads) or 't' (fixed encoders)");
  CrossSection section;
  section.axis = axis;
  section.value = value;
  for (const auto& rec : records) {
    if (rec.failed) continue;
    const size_t fixed = axis == 'h' ? rec.heads : rec.encoders;
    if (fixed == value) section.records.push_back(rec);
  }
  if (section.records.empty())
    throw Error(std::string("cross section: no records with ") + axis + " = " +
                std::to_string(value));
  std::sort(section.records.begin(), section.records.end(),
            [](const SweepRecord& a, const SweepRecord& b) { return a.q.value() < b.q.value(); });
  return section;
}

void emit_data_file(const CrossSection& section, const std::string& path) {
  if (section.records.empty()) throw Error("emit: empty cross section");
  std::vector<DataRow> rows;
  rows.reserve(section.records.size());
  for (const auto& rec : section.records)
    rows.push_back({rec.q.value(), rec.final_train_loss, rec.final_test_loss});
  write_data_file(path, rows);
}

namespace {

nlohmann::json record_to_json(const SweepRecord& rec) {
  return nlohmann::json{{"heads", rec.heads},
                        {"encoders", rec.encoders},
                        {"params", rec.params},
                        {"q_num", rec.q.num},
                        {"q_den", rec.q.den},
                        {"final_train_loss", rec.final_train_loss},
                        {"final_test_loss", rec.final_test_loss},
                        {"first_train_loss", rec.first_train_loss},
                        {"run_seed", rec.run_seed},
                        {"failed", rec.failed},
                        {"error", rec.error}};
}

SweepRecord record_from_json(const nlohmann::json& j) {
  SweepRecord rec;
  rec.heads = j.at("heads").get<size_t>();
  rec.encoders = j.at("encoders").get<size_t>();
  rec.params = j.at("params").get<long long>();
  rec.q = Rational{j.at("q_num").get<long long>(), j.at("q_den").get<long long>()};
  rec.final_train_loss = j.at("final_train_loss").get<double>();
  rec.final_test_loss = j.at("final_test_loss").get<double>();
  rec.first_train_loss = j.value("first_train_loss", 0.0);
  rec.run_seed = j.at("run_seed").get<uint64_t>();
  rec.failed = j.at("failed").get<bool>();
  rec.error = j.at("error").get<std::string>();
  return rec;
}

}  // namespace

void write_records_json(std::span<const SweepRecord> records, const std::string& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& rec : records) arr.push_back(record_to_json(rec));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << arr.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

std::vector<SweepRecord> read_records_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  nlohmann::json arr;
  try {
    in >> arr;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": bad records file: " + e.what());
  }
  std::vector<SweepRecord> records;
  try {
    for (const auto& j : arr) records.push_back(record_from_json(j));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": bad record entry: " + e.what());
  }
  return records;
}

void write_manifest(const SweepGrid& grid, std::span<const SweepRecord> records,
                    const ImageDataset& train_set, const ImageDataset& test_set,
                    double wall_seconds, const std::string& path) {
  nlohmann::json j;
  j["version"] = VITCAP_VERSION;
  j["grid"] = {{"heads", grid.heads},
               {"encoders", grid.encoders},
               {"seed", grid.seed},
               {"workers", grid.workers},
               {"base", grid.base},
               {"train", grid.train}};
  j["dataset"] = {{"train_count", train_set.count},
                  {"test_count", test_set.count},
                  {"classes", train_set.class_count},
                  {"image_size", train_set.image_size},
                  {"channels", train_set.channels}};
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& rec : records)
    seeds.push_back({{"heads", rec.heads}, {"encoders", rec.encoders}, {"seed", rec.run_seed}});
  j["run_seeds"] = std::move(seeds);
  j["wall_seconds"] = wall_seconds;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace vitcap
