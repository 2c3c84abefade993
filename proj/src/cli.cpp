// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
#include "flexc/cli.hpp"

#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "flexc/config.hpp"
#include "flexc/error.hpp"
#include "flexc/explore.hpp"
#include "flexc/lang.hpp"
#include "flexc/machine.hpp"
#include "flexc/mspec.hpp"
#include "flexc/transform.hpp"

namespace flexc::cli {

namespace {

constexpr int kOk = 0;
constexpr int kFindings = 1;
constexpr int kUsage = 2;

struct IoFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoFailure("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spill(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoFailure("cannot write " + path);
  out << text;
}

// "-" or empty sends the text to stdout.
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-")
    std::cout << text;
  else
    spill(path, text);
}

nlohmann::json parse_json_file(const std::string& path) {
  try {
    return nlohmann::json::parse(slurp(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoFailure(path + ": " + e.what());
  }
}

machine::CostModel load_cost_model(const std::string& path) {
  if (path.empty())
    return {};
  return machine::cost_model_from_json(parse_json_file(path));
}

// Build rejections are findings about the input; broken artifacts and
// provider trouble are state problems.
int exit_code_for(const BuildError& e) {
  const std::string& k = e.kind();
  if (k == "malformed-image" || k == "provider-failure")
    return kUsage;
  return kFindings;
}

// All partitions of `items` as restricted-growth assignments, in a stable
// order. Only used for small component sets.
std::vector<config::Partition> all_partitions(const std::vector<std::string>& items) {
  std::vector<config::Partition> out;
  std::vector<int> assign(items.size(), 0);
  auto emit_current = [&](int nblocks) {
    config::Partition p(nblocks);
    for (size_t i = 0; i < items.size(); ++i)
      p[assign[i]].push_back(items[i]);
    out.push_back(std::move(p));
  };
  std::function<void(size_t, int)> rec = [&](size_t i, int nblocks) {
    if (i == items.size()) {
      emit_current(nblocks);
      return;
    }
    for (int b = 0; b <= nblocks; ++b) {
      assign[i] = b;
      rec(i + 1, std::max(nblocks, b + 1));
    }
  };
  if (!items.empty())
    rec(0, 0);
  return out;
}

std::vector<config::ImageConfig> load_space(const nlohmann::json& j) {
  std::vector<config::ImageConfig> configs;
  if (j.contains("configs")) {
    for (const auto& cj : j.at("configs")) {
      config::ImageConfig cfg;
      config::from_json(cj, cfg);
      configs.push_back(std::move(cfg));
    }
    return configs;
  }
  if (!j.contains("enumerate"))
    throw IoFailure("space file needs a 'configs' array or an 'enumerate' block");
  const auto& e = j.at("enumerate");
  auto components = e.at("components").get<std::vector<std::string>>();
  std::vector<config::Partition> partitions;
  if (e.contains("partitions"))
    partitions = e.at("partitions").get<std::vector<config::Partition>>();
  else
    partitions = all_partitions(components);
  config::HardeningSet universe;
  if (e.contains("hardening"))
    for (const auto& name : e.at("hardening")) {
      auto h = config::hardening_from_name(name.get<std::string>());
      if (!h)
        throw IoFailure("unknown hardening '" + name.get<std::string>() + "'");
      universe.insert(*h);
    }
  auto mech = config::mechanism_from_name(e.value("mechanism", "mpk-dss"));
  if (!mech)
    throw IoFailure("unknown mechanism in space file");
  auto sharing = config::sharing_from_name(e.value("sharing", "dss"));
  if (!sharing)
    throw IoFailure("unknown sharing in space file");
  return config::enumerate_space(components, partitions, universe, *mech, *sharing);
}

struct ProviderSpec {
  std::string kind; // "results" or "sim"
  std::string path;
};

ProviderSpec parse_provider(const std::string& spec) {
  auto colon = spec.find(':');
  if (colon == std::string::npos)
    throw IoFailure("provider must be results:<file> or sim:<program>");
  ProviderSpec p{spec.substr(0, colon), spec.substr(colon + 1)};
  if (p.kind != "results" && p.kind != "sim")
    throw IoFailure("unknown provider '" + p.kind + "'");
  return p;
}

int cmd_validate(const std::string& config_path, const std::string& out) {
  auto cfg = config::parse_config(slurp(config_path));
  auto report = config::validate_config(cfg);
  nlohmann::json j = violations_report(report.violations);
  if (report.spare_shared_keys)
    j["spare_shared_keys"] = *report.spare_shared_keys;
  emit(out, j.dump(2) + "\n");
  return has_errors(report.violations) ? kFindings : kOk;
}

int cmd_mspec_check(const std::string& specs_path, const std::string& config_path,
                    const std::string& program_path, const std::string& out,
                    bool echo) {
  auto specs = mspec::parse_mspec(slurp(specs_path));
  if (echo) {
    emit(out, mspec::serialize_mspec(specs));
    return kOk;
  }
  auto cfg = config::parse_config(slurp(config_path));
  std::vector<Violation> findings;
  if (!program_path.empty()) {
    auto program = lang::parse_program(slurp(program_path));
    auto owners = program.symbol_owners();
    findings = mspec::check_requires(specs, cfg, &owners);
    auto api = mspec::check_api(specs, owners);
    findings.insert(findings.end(), api.begin(), api.end());
  } else {
    findings = mspec::check_requires(specs, cfg);
  }
  emit(out, violations_report(findings).dump(2) + "\n");
  return has_errors(findings) ? kFindings : kOk;
}

int cmd_build(const std::string& program_path, const std::string& config_path,
              const std::string& specs_path, uint64_t stack_size,
              const std::string& entry, const std::string& out) {
  auto program = lang::parse_program(slurp(program_path));
  auto cfg = config::parse_config(slurp(config_path));
  std::optional<mspec::SpecSet> specs;
  if (!specs_path.empty())
    specs = mspec::parse_mspec(slurp(specs_path));
  auto annotated = transform::insert_gate_placeholders(program);
  auto image = transform::instantiate(annotated, cfg, stack_size, entry,
                                      specs ? &*specs : nullptr);
  spill(out, transform::image_to_json(image).dump(2) + "\n");
  std::cout << transform::layout_report(image);
  return kOk;
}

int cmd_run(const std::string& image_path, const std::string& cost_model_path,
            const std::string& trace_path, const std::string& forge_from) {
  auto image = transform::image_from_json(parse_json_file(image_path));
  machine::RunOptions opts;
  if (!forge_from.empty())
    opts.forge_entry_from = forge_from;
  auto trace = machine::run(image, load_cost_model(cost_model_path), opts);
  if (!trace_path.empty())
    spill(trace_path, trace.to_jsonl());
  std::cout << trace.summary();
  return trace.faulted ? kFindings : kOk;
}

int cmd_bench(bool gates, bool allocs, const std::string& cost_model_path, int nvars) {
  auto cm = load_cost_model(cost_model_path);
  if (!gates && !allocs)
    gates = allocs = true;
  std::ostringstream out;
  if (gates) {
    int64_t light = machine::measure_gate_latency(config::Mechanism::MpkLight, cm);
    out << "gate latencies (cycles per crossing)\n";
    for (auto m : {config::Mechanism::FuncCall, config::Mechanism::MpkLight,
                   config::Mechanism::MpkDss, config::Mechanism::Ept}) {
      int64_t cycles = machine::measure_gate_latency(m, cm);
      char line[128];
      std::snprintf(line, sizeof line, "  %-10s %6lld  (%.2fx mpk-light)\n",
                    config::to_string(m), static_cast<long long>(cycles),
                    static_cast<double>(cycles) / static_cast<double>(light));
      out << line;
    }
  }
  if (allocs) {
    out << "shared-slot cost for " << nvars << " crossing stack variables\n";
    for (auto s : {config::Sharing::SharedStack, config::Sharing::Dss,
                   config::Sharing::HeapConversion}) {
      int64_t cycles = machine::measure_alloc_latency(s, nvars, cm);
      char line[128];
      std::snprintf(line, sizeof line, "  %-10s %6lld cycles\n", config::to_string(s),
                    static_cast<long long>(cycles));
      out << line;
    }
  }
  std::cout << out.str();
  return kOk;
}

int cmd_explore(const std::string& space_path, double budget,
                const std::string& provider_spec, bool pruned, int jobs,
                const std::string& dot_path, const std::string& out,
                const std::string& cost_model_path, uint64_t stack_size,
                const std::string& entry) {
  auto configs = load_space(parse_json_file(space_path));
  auto poset = explore::build_poset(configs);

  std::unique_ptr<explore::MeasurementProvider> provider;
  auto spec = parse_provider(provider_spec);
  if (spec.kind == "results") {
    provider = std::make_unique<explore::ResultsFileProvider>(parse_json_file(spec.path));
  } else {
    auto program = lang::parse_program(slurp(spec.path));
    provider = std::make_unique<explore::SimulatorProvider>(
        transform::insert_gate_placeholders(program), load_cost_model(cost_model_path),
        stack_size, entry);
  }

  auto result = explore::explore(poset, *provider, budget,
                                 pruned ? explore::Mode::Pruned : explore::Mode::Exhaustive,
                                 jobs);
  if (!dot_path.empty())
    spill(dot_path, explore::export_dot(poset, &result));
  emit(out, result.report().dump(2) + "\n");
  return result.aborted_at ? kUsage : kOk;
}

int cmd_export_poset(const std::string& space_path, const std::string& dot_path,
                     const std::string& json_path) {
  auto poset = explore::build_poset(load_space(parse_json_file(space_path)));
  if (!json_path.empty())
    emit(json_path, explore::poset_to_json(poset).dump(2) + "\n");
  if (!dot_path.empty())
    emit(dot_path, explore::export_dot(poset));
  if (json_path.empty() && dot_path.empty())
    std::cout << explore::export_dot(poset);
  return kOk;
}

} // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"flexc: build-time compartmentalization toolchain and simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "flexc 0.1.0");

  // validate
  std::string v_config, v_out;
  auto* validate = app.add_subcommand("validate", "check a compartment config");
  validate->add_option("config", v_config, "config file")->required();
  validate->add_option("-o,--out", v_out, "report destination (default stdout)");

  // mspec-check
  std::string m_specs, m_config, m_program, m_out;
  bool m_echo = false;
  auto* mcheck = app.add_subcommand("mspec-check", "check specs against a config");
  mcheck->add_option("specs", m_specs, "mspec file")->required();
  mcheck->add_option("config", m_config, "config file");
  mcheck->add_option("--program", m_program, "program supplying symbol ownership");
  mcheck->add_option("-o,--out", m_out, "report destination (default stdout)");
  mcheck->add_flag("--echo", m_echo, "parse and reprint the specs, no checking");

  // build
  std::string b_program, b_config, b_specs, b_entry = "main", b_out = "image.json";
  uint64_t b_stack = transform::kDefaultStackSize;
  auto* build = app.add_subcommand("build", "instantiate an image from program and config");
  build->add_option("program", b_program, "source file")->required();
  build->add_option("config", b_config, "config file")->required();
  build->add_option("--specs", b_specs, "mspec file (extends EPT legal entries)");
  build->add_option("--stack-size", b_stack, "per-compartment stack bytes");
  build->add_option("--entry", b_entry, "entry function");
  build->add_option("-o,--out", b_out, "image destination");

  // run
  std::string r_image, r_cm, r_trace, r_forge;
  auto* runcmd = app.add_subcommand("run", "interpret a built image");
  runcmd->add_option("image", r_image, "image file")->required();
  runcmd->add_option("--cost-model", r_cm, "cost model JSON");
  runcmd->add_option("--trace", r_trace, "write the event trace as JSON lines");
  runcmd->add_option("--forge-from", r_forge,
                     "emulate a forged transfer holding this compartment's key");

  // bench
  bool g_gates = false, g_allocs = false;
  std::string g_cm;
  int g_nvars = 3;
  auto* bench = app.add_subcommand("bench", "measure gate and sharing costs");
  bench->add_flag("--gates", g_gates, "gate latencies per backend");
  bench->add_flag("--allocs", g_allocs, "shared-slot costs per strategy");
  bench->add_option("--cost-model", g_cm, "cost model JSON");
  bench->add_option("-n,--vars", g_nvars, "shared variable count for --allocs");

  // explore
  std::string e_space, e_provider, e_dot, e_out, e_cm, e_entry = "main";
  double e_budget = 0;
  bool e_pruned = false;
  int e_jobs = 1;
  uint64_t e_stack = transform::kDefaultStackSize;
  auto* explorecmd = app.add_subcommand("explore", "search a configuration space");
  explorecmd->add_option("space", e_space, "space file (configs or enumerate block)")->required();
  explorecmd->add_option("--budget", e_budget, "performance budget")->required();
  explorecmd->add_option("--provider", e_provider, "results:<file> or sim:<program>")->required();
  explorecmd->add_flag("--pruned", e_pruned, "skip dominators of under-budget nodes");
  explorecmd->add_option("--jobs", e_jobs, "parallel measurements (exhaustive mode)");
  explorecmd->add_option("--dot", e_dot, "write the annotated poset as Graphviz");
  explorecmd->add_option("-o,--out", e_out, "report destination (default stdout)");
  explorecmd->add_option("--cost-model", e_cm, "cost model JSON (sim provider)");
  explorecmd->add_option("--stack-size", e_stack, "stack bytes (sim provider)");
  explorecmd->add_option("--entry", e_entry, "entry function (sim provider)");

  // export-poset
  std::string x_space, x_dot, x_json;
  auto* exportcmd = app.add_subcommand("export-poset", "emit the dominance structure");
  exportcmd->add_option("space", x_space, "space file")->required();
  exportcmd->add_option("--dot", x_dot, "Graphviz destination");
  exportcmd->add_option("--json", x_json, "JSON destination");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*validate)
      return cmd_validate(v_config, v_out);
    if (*mcheck) {
      if (!m_echo && m_config.empty()) {
        std::cerr << "error: mspec-check needs a config (or --echo)\n";
        return kUsage;
      }
      return cmd_mspec_check(m_specs, m_config, m_program, m_out, m_echo);
    }
    if (*build)
      return cmd_build(b_program, b_config, b_specs, b_stack, b_entry, b_out);
    if (*runcmd)
      return cmd_run(r_image, r_cm, r_trace, r_forge);
    if (*bench)
      return cmd_bench(g_gates, g_allocs, g_cm, g_nvars);
    if (*explorecmd)
      return cmd_explore(e_space, e_budget, e_provider, e_pruned, e_jobs, e_dot, e_out,
                         e_cm, e_stack, e_entry);
    if (*exportcmd)
      return cmd_export_poset(x_space, x_dot, x_json);
  } catch (const ParseError& e) {
    std::cerr << "error [" << e.kind() << "]: " << e.what() << "\n";
    return kUsage;
  } catch (const BuildError& e) {
    std::cerr << "error [" << e.kind() << "]: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const IoFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

} // namespace flexc::cli
