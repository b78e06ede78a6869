#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "volterra/pipeline.hpp"

namespace {

void print_usage() {
    std::cout << "Usage: volterra <command> [args]\n"
              << "Commands:\n"
              << "  solve <config> [--out <dir>]                 run the pipeline, write report files\n"
              << "  study <config> --ladder M=50,100,200 [--out <dir>]\n"
              << "                                               rerun over an M-ladder, fit observed orders\n"
              << "  presets                                      list the shipped problem presets\n"
              << "  check <config>                               validate a config without running\n"
              << "Output root: --out beats VOLTERRA_OUTPUT_ROOT beats the current directory;\n"
              << "the config's [output] directory is appended underneath.\n";
}

std::string output_dir(const volterra::RunConfig& cfg, const std::string& out_flag) {
    std::string root = out_flag;
    if (root.empty()) {
        const char* env = std::getenv("VOLTERRA_OUTPUT_ROOT");
        if (env && *env) root = env;
    }
    if (root.empty()) root = ".";
    return root + "/" + cfg.directory;
}

std::vector<int> parse_ladder(const std::string& arg) {
    const std::string prefix = "M=";
    if (arg.rfind(prefix, 0) != 0)
        throw volterra::ConfigError("--ladder expects M=<comma list>, got '" + arg + "'");
    std::vector<int> out;
    std::string rest = arg.substr(prefix.size());
    std::size_t pos = 0;
    while (pos <= rest.size()) {
        const std::size_t comma = rest.find(',', pos);
        const std::string tok = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            out.push_back(std::stoi(tok));
        } catch (...) {
            throw volterra::ConfigError("--ladder: malformed rung '" + tok + "'");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (out.empty()) throw volterra::ConfigError("--ladder: empty rung list");
    return out;
}

int cmd_solve(const std::string& path, const std::string& out_flag) {
    const volterra::RunConfig cfg = volterra::parse_config(path);
    const volterra::RunResult res = volterra::run_pipeline(cfg);
    const std::string dir = output_dir(cfg, out_flag);
    volterra::write_report_files(res, cfg, dir);
    if (res.field) volterra::write_diag_csv(*res.field, dir + "/ydiag.csv");
    if (res.pde) volterra::write_pde_csv(*res.pde, dir + "/pde.csv", dir + "/pde_grid.json");

    std::cout << "wrote " << dir << "/report.json\n";
    if (res.report.contains("picard")) {
        const auto& p = res.report["picard"];
        std::cout << "picard: converged=" << p["converged"] << " iterations=" << p["iterations"]
                  << " distance=" << p["distance"] << "\n";
    }
    if (res.report.contains("ydiag0"))
        std::cout << "ydiag0 mean: " << res.report["ydiag0"]["mean"] << "\n";
    if (res.report.contains("equivalence"))
        std::cout << "equivalence: " << res.report["equivalence"].dump() << "\n";
    return res.exit_code;
}

int cmd_study(const std::string& path, const std::string& ladder_arg, const std::string& out_flag) {
    const volterra::RunConfig cfg = volterra::parse_config(path);
    const std::vector<int> ladder = parse_ladder(ladder_arg);
    const volterra::StudyResult st = volterra::convergence_study(cfg, ladder);
    const std::string dir = output_dir(cfg, out_flag);
    volterra::write_study_csv(st, dir);
    std::cout << "wrote " << dir << "/study.csv and study_orders.csv\n";
    for (auto it = st.orders.begin(); it != st.orders.end(); ++it)
        if (!it.value().is_null())
            std::cout << "order[" << it.key() << "] = " << it.value() << "\n";
    for (const auto& row : st.rows)
        if (row.status != "ok") std::cout << "rung M=" << row.M << ": " << row.status << "\n";
    return 0;
}

int cmd_presets() {
    for (const std::string& name : volterra::preset_names()) std::cout << name << "\n";
    return 0;
}

int cmd_check(const std::string& path) {
    const volterra::RunConfig cfg = volterra::parse_config(path);
    if (cfg.hjb_mode())
        (void)volterra::to_hjb_spec(cfg);
    else
        (void)volterra::to_problem_spec(cfg);
    (void)cfg.xgrid();
    std::cout << "ok\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (args.empty() || args[0] == "--help" || args[0] == "-h") {
        print_usage();
        return args.empty() ? 1 : 0;
    }
    const std::string cmd = args[0];
    std::string config_path, ladder, out_flag;
    for (std::size_t k = 1; k < args.size(); ++k) {
        if (args[k] == "--ladder" && k + 1 < args.size()) ladder = args[++k];
        else if (args[k] == "--out" && k + 1 < args.size()) out_flag = args[++k];
        else if (args[k].rfind("--", 0) == 0) {
            std::cerr << "unknown flag: " << args[k] << "\n";
            return 1;
        } else if (config_path.empty()) config_path = args[k];
        else {
            std::cerr << "unexpected argument: " << args[k] << "\n";
            return 1;
        }
    }

    try {
        if (cmd == "presets") return cmd_presets();
        if (cmd == "solve" || cmd == "study" || cmd == "check") {
            if (config_path.empty()) {
                std::cerr << "missing config path\n";
                return 1;
            }
            if (cmd == "solve") return cmd_solve(config_path, out_flag);
            if (cmd == "check") return cmd_check(config_path);
            if (ladder.empty()) {
                std::cerr << "study requires --ladder M=...\n";
                return 1;
            }
            return cmd_study(config_path, ladder, out_flag);
        }
        std::cerr << "unknown command: " << cmd << "\n";
        print_usage();
        return 1;
    } catch (const volterra::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const volterra::NonConvergenceError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const volterra::Error& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
}
