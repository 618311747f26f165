#include "gpatch/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "gpatch/error.hpp"
#include "json.hpp"

namespace gpatch {

EvalSet build_eval_set(const VictimModel& victim, const Dataset& dataset,
                       std::size_t target_class, std::size_t max_images) {
  if (dataset.items.empty()) throw ContractError("dataset is empty");
  if (target_class >= victim.num_classes()) {
    throw ContractError("target class " + std::to_string(target_class) + " out of range for " +
                        victim.name() + " (" + std::to_string(victim.num_classes()) + " classes)");
  }
  std::vector<Image> images;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < dataset.items.size(); ++i) {
    if (dataset.items[i].label != target_class) candidates.push_back(i);
  }
  images.reserve(candidates.size());
  for (const auto i : candidates) images.push_back(*dataset.items[i].image);
  const auto out = logits(victim, images);

  EvalSet set;
  set.target_class = target_class;
  set.num_classes = victim.num_classes();
  for (std::size_t j = 0; j < candidates.size() && set.items.size() < max_images; ++j) {
    const auto& sample = dataset.items[candidates[j]];
    if (predict<float>(out[j]) == sample.label) set.items.push_back(sample);
  }
  if (set.items.empty()) {
    throw ContractError("no image of " + dataset.identifier + " is both correctly classified by " +
                        victim.name() + " and outside target class " +
                        std::to_string(target_class));
  }
  set.provenance = dataset.identifier + "|correct(" + victim.name() + ")&label!=" +
                   std::to_string(target_class) + "|cap=" + std::to_string(max_images);
  return set;
}

std::vector<std::uint8_t> attack_outcomes(const VictimModel& victim, const Patch& patch,
                                          const EvalSet& eval_set, std::size_t target_class,
                                          const AttackOptions& options) {
  if (eval_set.items.empty()) throw ContractError("eval set is empty");
  if (options.placements_per_image == 0) throw ContractError("placements_per_image must be >= 1");
  if (target_class >= victim.num_classes()) throw ContractError("target class out of range");
  for (const auto& item : eval_set.items) {
    check_placement(item.image->shape(), patch.pixels.shape(), Placement{});
  }
  const std::size_t trials = options.placements_per_image;
  const RandomStream root(options.seed);
  std::vector<std::uint8_t> hits(eval_set.items.size() * trials, 0);
  const long n = static_cast<long>(eval_set.items.size());
  // A throwing transform must not unwind through the parallel region.
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      const auto idx = static_cast<std::size_t>(i);
      const Image& image = *eval_set.items[idx].image;
      RandomStream placements = root.derive("eval-placement", {idx});
      for (std::size_t t = 0; t < trials; ++t) {
        const Patch used = options.transform ? options.transform(patch, idx, t) : patch;
        const Placement pl = sample_placement(image.dim(0), image.dim(1), used.height(),
                                              used.width(), placements);
        const Image composed = compose(used, image, pl);
        hits[idx * trials + t] = predict<float>(victim.network().logits(composed)) == target_class;
      }
    } catch (...) {
#pragma omp critical(gpatch_attack_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return hits;
}

EvalRow attack_success_rate(const VictimModel& victim, const Patch& patch, const EvalSet& eval_set,
                            std::size_t target_class, const AttackOptions& options) {
  const auto hits = attack_outcomes(victim, patch, eval_set, target_class, options);
  EvalRow row;
  row.victim = victim.name();
  row.patch_id = options.patch_id;
  row.patch_height = patch.height();
  row.patch_width = patch.width();
  row.condition = options.condition;
  row.p = hits.size();
  row.q = static_cast<std::size_t>(std::count(hits.begin(), hits.end(), std::uint8_t{1}));
  row.asr = static_cast<double>(row.q) / static_cast<double>(row.p);
  row.seed = options.seed;
  row.timestamp = report_timestamp();
  return row;
}

std::string report_timestamp() {
  std::time_t t = 0;
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH"); env != nullptr && *env != '\0') {
    t = static_cast<std::time_t>(std::stoll(env));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

namespace {

auto sort_key(const EvalRow& r) {
  return std::make_tuple(r.victim, r.patch_height * r.patch_width, r.patch_height, r.patch_width,
                         r.condition, r.patch_id, r.seed, r.p, r.q, r.timestamp);
}

std::string percent(double asr) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1) << asr * 100.0 << "%";
  return out.str();
}

std::string size_label(const EvalRow& r) {
  return std::to_string(r.patch_height) + "x" + std::to_string(r.patch_width);
}

std::string render_grid(const std::vector<EvalRow>& rows, bool by_size) {
  // Column keys in first-seen order of the sorted rows; sizes sort by area.
  std::vector<std::string> columns;
  std::vector<std::string> victims;
  std::map<std::pair<std::string, std::string>, std::vector<const EvalRow*>> cells;
  std::vector<std::pair<std::size_t, std::string>> size_columns;
  for (const auto& r : rows) {
    const std::string col = by_size ? size_label(r) : r.condition;
    if (by_size) {
      const std::pair<std::size_t, std::string> key{r.patch_height * r.patch_width, col};
      if (std::find(size_columns.begin(), size_columns.end(), key) == size_columns.end()) {
        size_columns.push_back(key);
      }
    } else if (std::find(columns.begin(), columns.end(), col) == columns.end()) {
      columns.push_back(col);
    }
    if (std::find(victims.begin(), victims.end(), r.victim) == victims.end()) {
      victims.push_back(r.victim);
    }
    cells[{r.victim, col}].push_back(&r);
  }
  if (by_size) {
    std::sort(size_columns.begin(), size_columns.end());
    for (const auto& [area, label] : size_columns) columns.push_back(label);
  } else {
    std::sort(columns.begin(), columns.end());
  }

  std::size_t first = std::string("victim").size();
  for (const auto& v : victims) first = std::max(first, v.size());
  std::vector<std::size_t> widths;
  for (const auto& c : columns) widths.push_back(std::max<std::size_t>(c.size(), 7));

  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(first)) << "victim";
  for (std::size_t j = 0; j < columns.size(); ++j) {
    out << "  " << std::right << std::setw(static_cast<int>(widths[j])) << columns[j];
  }
  out << "\n";
  for (const auto& v : victims) {
    out << std::left << std::setw(static_cast<int>(first)) << v;
    for (std::size_t j = 0; j < columns.size(); ++j) {
      std::string text = "-";
      const auto it = cells.find({v, columns[j]});
      if (it != cells.end()) {
        // Pool P and Q when several rows land in one cell.
        std::size_t p = 0, q = 0;
        for (const auto* r : it->second) {
          p += r->p;
          q += r->q;
        }
        text = percent(p == 0 ? 0.0 : static_cast<double>(q) / static_cast<double>(p));
      }
      out << "  " << std::right << std::setw(static_cast<int>(widths[j])) << text;
    }
    out << "\n";
  }
  return out.str();
}

std::string render_flat(const std::vector<EvalRow>& rows) {
  std::ostringstream out;
  out << "victim\tpatch\tsize\tcondition\tP\tQ\tASR\tseed\ttimestamp\n";
  for (const auto& r : rows) {
    out << r.victim << '\t' << r.patch_id << '\t' << size_label(r) << '\t' << r.condition << '\t'
        << r.p << '\t' << r.q << '\t' << percent(r.asr) << '\t' << r.seed << '\t' << r.timestamp
        << "\n";
  }
  return out.str();
}

}  // namespace

RenderedReport table_report(std::vector<EvalRow> rows, Grouping grouping) {
  if (rows.empty()) throw ContractError("cannot render an empty report");
  for (const auto& r : rows) {
    if (r.p == 0 || r.q > r.p) throw ContractError("report row violates 0 <= Q <= P, P > 0");
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const EvalRow& a, const EvalRow& b) { return sort_key(a) < sort_key(b); });
  RenderedReport report;
  switch (grouping) {
    case Grouping::flat:
      report.table = render_flat(rows);
      break;
    case Grouping::by_size:
      report.table = render_grid(rows, true);
      break;
    case Grouping::by_condition:
      report.table = render_grid(rows, false);
      break;
  }
  for (const auto& r : rows) report.jsonl += row_to_json(r) + "\n";
  return report;
}

std::string row_to_json(const EvalRow& row) {
  const nlohmann::ordered_json j = {
      {"victim", row.victim},     {"patch_id", row.patch_id},
      {"patch_height", row.patch_height}, {"patch_width", row.patch_width},
      {"condition", row.condition}, {"P", row.p},
      {"Q", row.q},               {"asr", row.asr},
      {"seed", row.seed},         {"timestamp", row.timestamp},
  };
  return j.dump();
}

EvalRow row_from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  EvalRow r;
  r.victim = j.at("victim").get<std::string>();
  r.patch_id = j.at("patch_id").get<std::string>();
  r.patch_height = j.at("patch_height").get<std::size_t>();
  r.patch_width = j.at("patch_width").get<std::size_t>();
  r.condition = j.at("condition").get<std::string>();
  r.p = j.at("P").get<std::size_t>();
  r.q = j.at("Q").get<std::size_t>();
  r.asr = j.at("asr").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.timestamp = j.at("timestamp").get<std::string>();
  return r;
}

void append_rows(const std::string& path, std::span<const EvalRow> rows) {
  std::string block;
  for (const auto& r : rows) block += row_to_json(r) + "\n";
  // One write per call keeps concurrent appenders from interleaving rows.
  std::FILE* f = std::fopen(path.c_str(), "ab");
  if (f == nullptr) throw IoError("cannot open report " + path);
  const bool ok = std::fwrite(block.data(), 1, block.size(), f) == block.size();
  std::fclose(f);
  if (!ok) throw IoError("short write to report " + path);
}

std::vector<EvalRow> read_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path);
  std::vector<EvalRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(row_from_json(line));
  }
  return rows;
}

}  // namespace gpatch
