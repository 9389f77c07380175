#include "daggerlab/sweep.hpp"

#include <atomic>
#include <cctype>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace daggerlab {

std::string run_id(const RunConfig& config, const std::string& label) {
    std::string prefix;
    for (char c : label) {
        const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
        prefix.push_back(keep ? c : '_');
    }
    std::string id = std::string(to_string(config.method)) + "_" + std::string(to_string(config.env)) + "_s" +
                     std::to_string(config.seed);
    return prefix.empty() ? id : prefix + "__" + id;
}

void write_run_outputs(const std::filesystem::path& dir, const std::string& id, const RunConfig& config,
                       const RunResult& result) {
    std::filesystem::create_directories(dir);
    write_text_file(dir / (id + ".metrics.csv"), metrics_csv(result.metrics));
    if (config.record_trace && config.method != Method::bc) {
        write_text_file(dir / (id + ".trace.csv"), trace_csv(id, result.trace));
    }
    save_checkpoint(dir / (id + ".checkpoint.json"), make_checkpoint(config, result));
    write_text_file(dir / (id + ".config.toml"), serialize(config));
}

std::vector<SweepOutcome> run_sweep(const SweepSpec& spec, const SweepOptions& options) {
    if (options.workers < 1) throw std::invalid_argument("run_sweep: workers must be >= 1");
    const std::vector<SweepPoint> points = enumerate(spec);
    std::vector<SweepOutcome> outcomes(points.size());
    const std::filesystem::path runs_dir = options.out_dir / "runs";
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t i = next++; i < points.size(); i = next++) {
            SweepOutcome& o = outcomes[i];
            o.point = points[i];
            o.id = run_id(o.point.config, o.point.label);
            try {
                RunResult r = run(o.point.config);
                if (!options.out_dir.empty() && options.write_run_files) {
                    write_run_outputs(runs_dir, o.id, o.point.config, r);
                }
                o.metrics = std::move(r.metrics);
            } catch (const std::exception& e) {
                o.error = e.what();
            }
        }
    };
    const int n = std::min<int>(options.workers, static_cast<int>(std::max<std::size_t>(points.size(), 1)));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int k = 0; k < n; ++k) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        std::ostringstream index;
        index << "run_id,group,seed,status,error\n";
        std::vector<SessionMetrics> ok;
        std::vector<std::string> groups;
        for (const SweepOutcome& o : outcomes) {
            std::string err = o.error;
            for (char& c : err)
                if (c == ',' || c == '\n') c = ' ';
            index << o.id << ',' << o.point.label << ',' << o.point.config.seed << ','
                  << (o.metrics ? "ok" : "failed") << ',' << err << '\n';
            if (o.metrics) {
                ok.push_back(*o.metrics);
                groups.push_back(o.point.label);
            }
        }
        write_text_file(options.out_dir / "index.csv", index.str());
        write_metrics_csv(options.out_dir / "metrics.csv", ok);
        std::ostringstream summary;
        const auto rows = summarize(ok, groups);
        write_summary_csv(summary, rows);
        write_text_file(options.out_dir / "summary.csv", summary.str());
    }
    return outcomes;
}

}  // namespace daggerlab
