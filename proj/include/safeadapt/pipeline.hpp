#pragma once

// On-disk orchestration of the three phases. Every (layout, seed) pair owns
// runs/<experiment>/<seed>/ with one directory per stage:
//
//   train/          source_actor.json actor.json critic.json dataset.json
//                   train_log.csv finetune.json
//   certify/        certificate.json bounds.json solver_trace.csv
//                   verification.json   (or refusal.json)
//   adapt_<mode>/   actor.json critic.json log.csv summary.json [fisher.json]
//   evaluate/       rows.csv
//
// and a stage.json recording status, an input key and output checksums. A
// stage whose record matches the current key and whose outputs still hash to
// the recorded values is skipped, which makes interrupted runs resumable.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "safeadapt/adapt.hpp"
#include "safeadapt/config.hpp"
#include "safeadapt/metrics.hpp"

namespace safeadapt::pipeline {

enum class Stage { Train, Certify, AdaptSafe, AdaptUnsafe, AdaptEwc, Evaluate };

std::string to_string(Stage s);
Stage adapt_stage(adapt::Mode m);

/// Exit codes shared with the command-line tool.
enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kRefused = 3, kBreach = 4 };

/// Stage statuses: "ok", "refused", "source_unsafe", "invariant_breach",
/// "verification_failed", "failed", and "missing_<stage>" for a stage whose
/// prerequisite never ran (reported as a configuration error).
int exit_code_for_status(const std::string& status);

struct StageRecord {
  std::string stage;
  std::string status;
  std::string message;
  std::string key;
  std::map<std::string, std::string> outputs;  // file name -> checksum
};

nlohmann::json to_json(const StageRecord& r);
StageRecord stage_record_from_json(const nlohmann::json& j);

/// Hex FNV-1a of the file's bytes.
std::string file_checksum(const std::filesystem::path& path);

/// Writes through a temporary file and a rename so readers never see a
/// partial document.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Logging sink; the default writes to stderr.
using Logger = std::function<void(const std::string&)>;

struct Options {
  bool force = false;                                   // ignore completed stages
  std::optional<std::filesystem::path> checkpoint;      // certify: alternative actor
  unsigned jobs = 1;
  Logger log;
};

/// One (layout, seed) unit of work.
class SeedRun {
 public:
  SeedRun(const config::ExperimentConfig& cfg, const config::LayoutRef& layout, std::uint64_t seed,
          const Options& opts);

  std::filesystem::path dir() const { return dir_; }
  std::filesystem::path stage_dir(Stage s) const;

  /// Each runs the stage unless its record is current; returns the record.
  /// Stages whose prerequisites did not finish with "ok" are not run and
  /// report the upstream status.
  StageRecord train();
  StageRecord certify();
  StageRecord adapt(adapt::Mode mode);
  StageRecord evaluate();

  /// Reads the evaluate stage rows (failed rows when it did not run).
  std::vector<metrics::MetricRow> rows() const;

 private:
  std::optional<StageRecord> current(Stage s, const std::string& key) const;
  StageRecord finish(Stage s, const std::string& key, const std::string& status, const std::string& message,
                     const std::vector<std::string>& files);
  std::string upstream_key(Stage s, std::initializer_list<Stage> deps, const nlohmann::json& settings) const;
  std::optional<StageRecord> record(Stage s) const;
  void log(const std::string& msg) const;

  const config::ExperimentConfig& cfg_;
  const config::LayoutRef& layout_;
  std::uint64_t seed_;
  Options opts_;
  std::filesystem::path dir_;
};

/// Rows with the given status and NaN metrics for every method and task.
std::vector<metrics::MetricRow> failed_rows(const config::ExperimentConfig& cfg, const config::LayoutRef& layout,
                                            std::uint64_t seed, const std::string& status);

/// Which stages a command runs.
struct Plan {
  bool train = false;
  bool certify = false;
  std::vector<adapt::Mode> adapt;
  bool evaluate = false;
};

struct RunSummary {
  int exit_code = kOk;
  std::vector<std::string> problems;  // "<layout> seed <s> <stage>: <status> <message>"
};

/// Runs the plan over every layout and seed (seeds in parallel up to
/// opts.jobs), then, when evaluating, writes results.csv and aggregate.json
/// into each experiment directory. The exit code is the most severe one
/// among the stages that ran (breach over refusal over success).
RunSummary run_plan(const config::ExperimentConfig& cfg, const Plan& plan, const Options& opts);

/// Re-verifies a certificate file; the centre is loaded from the checkpoint
/// path stored in it (relative to the certificate's directory).
rashomon::VerificationReport verify_certificate_file(const std::filesystem::path& cert_path,
                                                     const std::filesystem::path& dataset_path, std::size_t samples,
                                                     std::uint64_t seed);

}  // namespace safeadapt::pipeline
