// aacv: verification, cost accounting, toy training and attention dumps.
//
// Exit codes: 0 success, 1 verification or training failure, 2 usage or
// input error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "aacv/accounting.hpp"
#include "aacv/formats.hpp"
#include "aacv/models.hpp"
#include "aacv/relattn.hpp"
#include "aacv/verify.hpp"

namespace {

using namespace aacv;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw InputError("expected true or false, got '" + s + "'");
}

std::vector<PixelQuery> parse_pixels(const std::string& text) {
  std::vector<PixelQuery> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    unsigned long long y = 0, x = 0;
    char tail = 0;
    if (std::sscanf(item.c_str(), "%llu,%llu%c", &y, &x, &tail) != 2) {
      throw InputError("bad pixel '" + item + "' (expected y,x)");
    }
    out.push_back({static_cast<std::size_t>(y), static_cast<std::size_t>(x)});
  }
  if (out.empty()) throw InputError("no pixels given");
  return out;
}

struct VerifyArgs {
  std::string suite = "all";
  std::uint64_t seed = 0;
  bool inject_fault = false;
};

int cmd_verify(const VerifyArgs& a) {
  const auto suite = verify::parse_suite(a.suite);
  detail::set_rel_to_abs_fault(a.inject_fault);
  verify::Options opts;
  opts.seed = a.seed;
  const auto props = verify::run(suite, opts);
  detail::set_rel_to_abs_fault(false);
  std::size_t failed = 0;
  for (const auto& p : props) {
    std::cout << p.line() << "\n";
    if (!p.pass) ++failed;
  }
  std::cout << (failed ? "FAIL " : "PASS ") << props.size() - failed << "/" << props.size()
            << " properties\n";
  return failed ? kFailure : kOk;
}

struct CountArgs {
  std::string arch;
  std::optional<double> kappa, upsilon;
  std::optional<std::size_t> heads, image_size;
  std::optional<std::string> augmented;
  std::string format = "table";
};

int cmd_count(const CountArgs& a) {
  auto opts = default_descriptor_options(a.arch);
  opts.augmented = a.augmented ? parse_bool(*a.augmented) : (a.kappa || a.upsilon);
  if (a.kappa) opts.kappa = *a.kappa;
  if (a.upsilon) opts.upsilon = *a.upsilon;
  if (a.heads) opts.heads = *a.heads;
  if (a.image_size) opts.image_size = *a.image_size;
  auto report = cost_report(build_descriptor(a.arch, opts));
  std::cout << (a.format == "json" ? report.to_json() : report.to_table());
  return kOk;
}

struct TrainArgs {
  std::string config, out_weights, out_trace;
};

int cmd_train(const TrainArgs& a) {
  const auto cfg = load_run_config(a.config);
  ToyNet<float> net(cfg.net);
  const auto trace = train(net, cfg.train);
  save_weights(a.out_weights, collect_weights(net));
  write_trace_csv(a.out_trace, trace);
  const std::size_t n = trace.size();
  const std::size_t head = std::min<std::size_t>(10, n), tail = std::min<std::size_t>(100, n);
  std::printf("steps=%zu params=%zu first10_loss=%.6f last100_loss=%.6f\n", n,
              net.parameters().element_count(), mean_loss(trace, 0, head),
              mean_loss(trace, n - tail, tail));
  return kOk;
}

struct DumpArgs {
  std::string weights, input, pixels, out, config;
};

int cmd_dump(const DumpArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) cfg = load_run_config(a.config);
  ToyNet<float> net(cfg.net);
  apply_weights(net, load_weights(a.weights));
  const auto paths = dump_attention_maps(net, read_ppm(a.input), parse_pixels(a.pixels), a.out);
  std::printf("wrote %zu maps to %s\n", paths.size(), a.out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-augmented convolution toolkit"};
  app.require_subcommand(1);

  VerifyArgs va;
  auto* verify_cmd = app.add_subcommand("verify", "Run property suites");
  verify_cmd->add_option("--suite", va.suite, "oracle, grad, equivariance or all");
  verify_cmd->add_option("--seed", va.seed, "Seed for the random configurations");
  verify_cmd->add_flag("--inject-fault", va.inject_fault, "Corrupt rel_to_abs to exercise the suites");

  CountArgs ca;
  auto* count_cmd = app.add_subcommand("count", "Parameter, FLOP and attention-memory report");
  count_cmd->add_option("--arch", ca.arch, "Architecture family")->required();
  count_cmd->add_option("--kappa", ca.kappa, "Key depth ratio");
  count_cmd->add_option("--upsilon", ca.upsilon, "Attention channel ratio");
  count_cmd->add_option("--heads", ca.heads, "Attention heads");
  count_cmd->add_option("--image-size", ca.image_size, "Input resolution");
  count_cmd->add_option("--augmented", ca.augmented, "true or false");
  count_cmd->add_option("--format", ca.format, "json or table")->check(CLI::IsMember({"json", "table"}));

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train the toy classifier");
  train_cmd->add_option("--config", ta.config, "Run config file")->required();
  train_cmd->add_option("--out-weights", ta.out_weights, "Weights output")->required();
  train_cmd->add_option("--out-trace", ta.out_trace, "CSV trace output")->required();

  DumpArgs da;
  auto* dump_cmd = app.add_subcommand("dump-attn", "Write attention maps as PGM files");
  dump_cmd->add_option("--weights", da.weights, "Weights file")->required();
  dump_cmd->add_option("--input", da.input, "Binary PPM image")->required();
  dump_cmd->add_option("--pixels", da.pixels, "Query pixels as \"y,x;y,x\"")->required();
  dump_cmd->add_option("--out", da.out, "Output directory")->required();
  dump_cmd->add_option("--config", da.config, "Run config describing the architecture");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*verify_cmd) return cmd_verify(va);
    if (*count_cmd) return cmd_count(ca);
    if (*train_cmd) return cmd_train(ta);
    if (*dump_cmd) return cmd_dump(da);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
