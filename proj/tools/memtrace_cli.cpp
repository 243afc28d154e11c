// memtrace: mine, build, attack and report on training-data extraction benchmarks.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "memtrace/memtrace.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kEndpoint = 3 };

std::optional<std::filesystem::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-data extraction benchmark harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "Run configuration (JSON)")->required();
  app.add_option("--set", overrides, "Override a config field, e.g. --set game.attack_prefix_tokens=30");

  std::string out;
  auto* mine = app.add_subcommand("mine", "Mine candidate spans from the corpus");
  mine->add_option("-o,--out", out, "Candidates file (default <output_dir>/candidates.jsonl)");

  std::string candidates;
  auto* build = app.add_subcommand("build", "Probe candidates with the builder model and freeze a benchmark");
  build->add_option("--candidates", candidates, "Candidates file from `mine`")->required();
  build->add_option("-o,--out", out, "Benchmark file (default <output_dir>/benchmark.jsonl)");

  std::string benchmark, generator;
  auto* attack = app.add_subcommand("attack", "Run the prefix-only attack against one generator");
  attack->add_option("--benchmark", benchmark, "Benchmark file")->required();
  attack->add_option("-g,--generator", generator, "Generator name from the config")->required();
  attack->add_option("-o,--out", out, "Results file (default <output_dir>/results.<generator>.jsonl)");

  std::vector<std::string> results;
  std::string report_bench, overrides_file;
  int precision = 3;
  auto* report = app.add_subcommand("report", "Aggregate results files into summary tables");
  report->add_option("results", results, "Results files")->required();
  report->add_option("--benchmark", report_bench, "Benchmark file, enables the category breakdown");
  report->add_option("--overrides", overrides_file, "Manual category labels (line-delimited records)");
  report->add_option("-o,--out-dir", out, "Report directory (default <output_dir>/report)");
  report->add_option("--precision", precision, "Decimals in summary.tsv")->check(CLI::Range(0, 12));

  std::string records;
  auto* import = app.add_subcommand("import", "Convert prefix/suffix-only records into an attack-only benchmark");
  import->add_option("--records", records, "Line-delimited {prefix, suffix} records")->required();
  import->add_option("-o,--out", out, "Benchmark file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const auto cfg = memtrace::load_config(config_path, overrides);
    if (*mine) {
      const auto s = memtrace::cmd_mine(cfg, opt_path(out));
      std::cout << "ingested " << s.ingested << " files (" << s.skipped_files << " skipped), " << s.kept_files
                << " passed filters, " << s.candidates << " candidates -> " << s.candidates_path.string() << "\n";
    } else if (*build) {
      const auto b = memtrace::cmd_build(cfg, candidates, opt_path(out));
      std::cout << "benchmark of " << b.samples.size() << " samples (probed " << b.manifest.probed << ")"
                << (b.manifest.under_target ? " [under target]" : "") << "\n";
    } else if (*attack) {
      const auto s = memtrace::cmd_attack(cfg, benchmark, generator, opt_path(out));
      std::cout << "judged " << s.judged << " samples (" << s.resumed << " resumed, " << s.skipped
                << " skipped) -> " << s.results_path.string() << "\n";
    } else if (*report) {
      memtrace::ReportOptions opts;
      opts.benchmark = opt_path(report_bench);
      opts.overrides = opt_path(overrides_file);
      opts.out_dir = opt_path(out);
      opts.precision = precision;
      std::vector<std::filesystem::path> paths(results.begin(), results.end());
      const auto r = memtrace::cmd_report(cfg, paths, opts);
      for (const auto& p : r.written) std::cout << p.string() << "\n";
    } else if (*import) {
      const auto b = memtrace::cmd_import(cfg, records, out);
      std::cout << "imported " << b.samples.size() << " attack-only samples\n";
    }
  } catch (const memtrace::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const memtrace::EndpointError& e) {
    std::cerr << "endpoint error: " << e.what() << "\n";
    return kEndpoint;
  } catch (const memtrace::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
