// Command-line front end for libmacunet. Talks to the library strictly
// through the public C API.
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "macunet/macunet.h"

namespace {

const char* kUsage =
    "usage: macu <subcommand> [flags]\n"
    "\n"
    "subcommands:\n"
    "  synth --out DIR [--count 8] [--size 64] [--classes 6] [--seed 7]\n"
    "  tile --in DIR --out DIR [--patch 256]\n"
    "  split --data DIR [--seed 0] --out FILE\n"
    "  train --config FILE --data DIR --split FILE --out CKPT [--log CSV]\n"
    "  eval --ckpt CKPT --data DIR --split FILE [--subset test] [--report FILE]\n"
    "  infer --ckpt CKPT --image F.ppm --out F.pgm [--color F.ppm] [--fused]\n"
    "  fuse --ckpt CKPT --out CKPT\n"
    "  params --config FILE\n"
    "  gradcheck [--tol 1e-4]\n"
    "  bench --config FILE [--size 256] [--reps 10]\n";

struct CliError {
  int code;  // process exit code
  std::string msg;
};

[[noreturn]] void die_usage(const std::string& msg) {
  throw CliError{1, msg};
}

[[noreturn]] void die_data(const std::string& msg) {
  throw CliError{2, msg};
}

void check(macu_status s, const char* what) {
  if (s != MACU_OK)
    die_data(std::string(what) + ": " + macu_status_name(s) + ": " +
             macu_last_error());
}

// --flag value pairs; names in `bools` take no value.
struct Args {
  std::map<std::string, std::string> values;
  std::set<std::string> flags;
};

Args parse_args(int argc, char** argv, int from,
                const std::set<std::string>& valued,
                const std::set<std::string>& bools) {
  Args a;
  for (int i = from; i < argc; ++i) {
    const std::string tok = argv[i];
    if (tok.rfind("--", 0) != 0) die_usage("unexpected argument " + tok);
    const std::string name = tok.substr(2);
    if (bools.count(name)) {
      a.flags.insert(name);
    } else if (valued.count(name)) {
      if (i + 1 >= argc) die_usage("flag --" + name + " needs a value");
      a.values[name] = argv[++i];
    } else {
      die_usage("unknown flag --" + name);
    }
  }
  return a;
}

std::string required(const Args& a, const std::string& name) {
  auto it = a.values.find(name);
  if (it == a.values.end()) die_usage("missing required flag --" + name);
  return it->second;
}

std::string optional(const Args& a, const std::string& name,
                     const std::string& fallback) {
  auto it = a.values.find(name);
  return it == a.values.end() ? fallback : it->second;
}

long parse_long(const std::string& text, const std::string& what, int code) {
  try {
    size_t pos = 0;
    const long v = std::stol(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw CliError{code, what + " expects an integer, got '" + text + "'"};
  }
}

unsigned long long parse_seed(const std::string& text, const std::string& what,
                              int code) {
  try {
    size_t pos = 0;
    const unsigned long long v = std::stoull(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw CliError{code, what + " expects an unsigned integer, got '" + text +
                             "'"};
  }
}

double parse_double(const std::string& text, const std::string& what,
                    int code) {
  try {
    size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw CliError{code, what + " expects a number, got '" + text + "'"};
  }
}

// ---- run config ----------------------------------------------------------

struct RunConfig {
  std::string model = "macu";
  long levels = 5;
  long base_width = 16;
  long classes = 6;
  double lr = 0.0003;
  double lr_min = 0;
  long epochs = 50;
  long batch_size = 8;
  unsigned long long seed = 0;
  std::string precision = "f32";
  long cab_ratio = 16;
};

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) die_data("cannot open config file " + path);
  RunConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    const std::string where = path + ":" + std::to_string(lineno);
    if (eq == std::string::npos)
      die_data(where + ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      die_data(where + ": empty key or value");
    if (key == "model") c.model = val;
    else if (key == "levels") c.levels = parse_long(val, where + ": levels", 2);
    else if (key == "base_width")
      c.base_width = parse_long(val, where + ": base_width", 2);
    else if (key == "classes")
      c.classes = parse_long(val, where + ": classes", 2);
    else if (key == "lr") c.lr = parse_double(val, where + ": lr", 2);
    else if (key == "lr_min")
      c.lr_min = parse_double(val, where + ": lr_min", 2);
    else if (key == "epochs") c.epochs = parse_long(val, where + ": epochs", 2);
    else if (key == "batch_size")
      c.batch_size = parse_long(val, where + ": batch_size", 2);
    else if (key == "seed") c.seed = parse_seed(val, where + ": seed", 2);
    else if (key == "precision") c.precision = val;
    else if (key == "cab_ratio")
      c.cab_ratio = parse_long(val, where + ": cab_ratio", 2);
    else die_data(where + ": unknown key '" + key + "'");
  }
  if (c.precision != "f32" && c.precision != "f64")
    die_data(path + ": precision must be f32 or f64, got '" + c.precision +
             "'");
  return c;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void echo_config(const RunConfig& c) {
  std::printf("model = %s\n", c.model.c_str());
  std::printf("levels = %ld\n", c.levels);
  std::printf("base_width = %ld\n", c.base_width);
  std::printf("classes = %ld\n", c.classes);
  std::printf("lr = %s\n", fmt_double(c.lr).c_str());
  std::printf("lr_min = %s\n", fmt_double(c.lr_min).c_str());
  std::printf("epochs = %ld\n", c.epochs);
  std::printf("batch_size = %ld\n", c.batch_size);
  std::printf("seed = %llu\n", c.seed);
  std::printf("precision = %s\n", c.precision.c_str());
  std::printf("cab_ratio = %ld\n", c.cab_ratio);
}

macu_net_config to_net_config(const RunConfig& c) {
  macu_net_config nc{};
  nc.variant = c.model.c_str();
  nc.levels = int32_t(c.levels);
  nc.base_width = int32_t(c.base_width);
  nc.classes = int32_t(c.classes);
  nc.in_channels = 3;
  nc.cab_ratio = int32_t(c.cab_ratio);
  return nc;
}

// Fetch a string-producing C API call via the two-call pattern.
template <typename F>
std::string fetch_text(F&& call, const char* what) {
  size_t needed = 0;
  check(call(nullptr, 0, &needed), what);
  std::string buf(needed, '\0');
  check(call(buf.data(), buf.size(), &needed), what);
  buf.resize(needed > 0 ? needed - 1 : 0);
  return buf;
}

// ---- subcommands ---------------------------------------------------------

int cmd_synth(int argc, char** argv) {
  auto a = parse_args(argc, argv, 2, {"out", "count", "size", "classes", "seed"},
                      {});
  const std::string out = required(a, "out");
  const long count = parse_long(optional(a, "count", "8"), "--count", 1);
  const long size = parse_long(optional(a, "size", "64"), "--size", 1);
  const long classes = parse_long(optional(a, "classes", "6"), "--classes", 1);
  const auto seed = parse_seed(optional(a, "seed", "7"), "--seed", 1);
  check(macu_synth(out.c_str(), int32_t(count), int32_t(size),
                   int32_t(classes), seed),
        "synth");
  std::printf("written=%ld dir=%s\n", count, out.c_str());
  return 0;
}

int cmd_tile(int argc, char** argv) {
  auto a = parse_args(argc, argv, 2, {"in", "out", "patch"}, {});
  const std::string in = required(a, "in");
  const std::string out = required(a, "out");
  const long patch = parse_long(optional(a, "patch", "256"), "--patch", 1);
  uint64_t patches = 0;
  check(macu_tile(in.c_str(), out.c_str(), int32_t(patch), &patches), "tile");
  std::printf("patches=%" PRIu64 "\n", patches);
  return 0;
}

int cmd_split(int argc, char** argv) {
  auto a = parse_args(argc, argv, 2, {"data", "seed", "out"}, {});
  const std::string data = required(a, "data");
  const std::string out = required(a, "out");
  const auto seed = parse_seed(optional(a, "seed", "0"), "--seed", 1);
  uint64_t tr = 0, va = 0, te = 0;
  check(macu_split(data.c_str(), seed, out.c_str(), &tr, &va, &te), "split");
  std::printf("train=%" PRIu64 " val=%" PRIu64 " test=%" PRIu64 "\n", tr, va,
              te);
  return 0;
}

int cmd_train(int argc, char** argv) {
  auto a = parse_args(argc, argv, 2, {"config", "data", "split", "out", "log"},
                      {});
  const auto cfg = load_run_config(required(a, "config"));
  const std::string data = required(a, "data");
  const std::string split = required(a, "split");
  const std::string out = required(a, "out");
  const std::string log = optional(a, "log", "");
  echo_config(cfg);
  const auto nc = to_net_config(cfg);
  macu_train_options opt{};
  opt.epochs = int32_t(cfg.epochs);
  opt.batch_size = int32_t(cfg.batch_size);
  opt.seed = cfg.seed;
  opt.lr = cfg.lr;
  opt.lr_min = cfg.lr_min;
  opt.max_steps = -1;
  opt.precision = cfg.precision.c_str();
  check(macu_train(&nc, &opt, data.c_str(), split.c_str(), out.c_str(),
                   log.empty() ? nullptr : log.c_str()),
        "train");
  std::printf("checkpoint=%s\n", out.c_str());
  return 0;
}

int cmd_eval(int argc, char** argv) {
  auto a = parse_args(argc, argv, 2,
                      {"ckpt", "data", "split", "subset", "report"}, {});
  const std::string ckpt = required(a, "ckpt");
  const std::string data = required(a, "data");
  const std::string split = required(a, "split");
  const std::string subset = optional(a, "subset", "test");
  const std::string report_path = optional(a, "report", "");
  const std::string report = fetch_text(
      [&](char* buf, size_t cap, size_t* needed) {
        return macu_evaluate(ckpt.c_str(), data.c_str(), split.c_str(),
                             subset.c_str(), buf, cap, needed);
      },
      "eval");
  std::fputs(report.c_str(), stdout);
  if (!report_path.empty()) {
    std::ofstream f(report_path, std::ios::binary);
    if (!f || !(f << report)) die_data("cannot write report " + report_path);
  }
  return 0;
}

int cmd_infer(int argc, char** argv) {
  auto a = parse_args(argc, argv, 2, {"ckpt", "image", "out", "color"},
                      {"fused"});
  const std::string ckpt = required(a, "ckpt");
  const std::string image = required(a, "image");
  const std::string out = required(a, "out");
  const std::string color = optional(a, "color", "");
  const bool fused = a.flags.count("fused") > 0;
  int64_t mismatch = -1;
  check(macu_infer_file(ckpt.c_str(), image.c_str(), out.c_str(),
                        color.empty() ? nullptr : color.c_str(), fused ? 1 : 0,
                        &mismatch),
        "infer");
  if (fused && mismatch >= 0)
    std::printf("fused_argmax_mismatches=%" PRId64 "\n", mismatch);
  std::printf("mask=%s\n", out.c_str());
  return 0;
}

int cmd_fuse(int argc, char** argv) {
  auto a = parse_args(argc, argv, 2, {"ckpt", "out"}, {});
  const std::string ckpt = required(a, "ckpt");
  const std::string out = required(a, "out");
  uint64_t before = 0, after = 0;
  double ratio = 0;
  check(macu_fuse_file(ckpt.c_str(), out.c_str(), &before, &after, &ratio),
        "fuse");
  std::printf("params_before=%" PRIu64 "\n", before);
  std::printf("params_after=%" PRIu64 "\n", after);
  std::printf("acb_mac_ratio=%.6f\n", ratio);
  return 0;
}

int cmd_params(int argc, char** argv) {
  auto a = parse_args(argc, argv, 2, {"config"}, {});
  const auto cfg = load_run_config(required(a, "config"));
  echo_config(cfg);
  const auto nc = to_net_config(cfg);
  macu_net* net = nullptr;
  check(macu_net_create(&nc, cfg.seed, &net), "params");
  const std::string table = fetch_text(
      [&](char* buf, size_t cap, size_t* needed) {
        return macu_net_param_report(net, 0, buf, cap, needed);
      },
      "params");
  macu_net_destroy(net);
  std::fputs(table.c_str(), stdout);
  return 0;
}

int cmd_gradcheck(int argc, char** argv) {
  auto a = parse_args(argc, argv, 2, {"tol"}, {});
  const double tol = parse_double(optional(a, "tol", "1e-4"), "--tol", 1);
  int all_pass = 0;
  const std::string report = fetch_text(
      [&](char* buf, size_t cap, size_t* needed) {
        return macu_gradcheck(tol, &all_pass, buf, cap, needed);
      },
      "gradcheck");
  std::fputs(report.c_str(), stdout);
  if (!all_pass) {
    std::fprintf(stderr, "gradcheck: verification failed\n");
    return 3;
  }
  return 0;
}

int cmd_bench(int argc, char** argv) {
  auto a = parse_args(argc, argv, 2, {"config", "size", "reps"}, {});
  const auto cfg = load_run_config(required(a, "config"));
  const long size = parse_long(optional(a, "size", "256"), "--size", 1);
  const long reps = parse_long(optional(a, "reps", "10"), "--reps", 1);
  echo_config(cfg);
  const auto nc = to_net_config(cfg);
  macu_bench_result r{};
  check(macu_bench(&nc, int32_t(size), int32_t(reps), &r), "bench");
  std::printf("size=%ld\n", size);
  std::printf("median_ms_unfused=%.3f\n", r.median_ms_unfused);
  std::printf("median_ms_fused=%.3f\n", r.median_ms_fused);
  std::printf("macs_unfused=%" PRId64 "\n", r.macs_unfused);
  std::printf("macs_fused=%" PRId64 "\n", r.macs_fused);
  std::printf("acb_macs_unfused=%" PRId64 "\n", r.acb_macs_unfused);
  std::printf("acb_macs_fused=%" PRId64 "\n", r.acb_macs_fused);
  std::printf("acb_mac_ratio=%.6f\n",
              double(r.acb_macs_fused) / double(r.acb_macs_unfused));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fputs(kUsage, stderr);
    return 1;
  }
  const std::string cmd = argv[1];
  try {
    if (cmd == "synth") return cmd_synth(argc, argv);
    if (cmd == "tile") return cmd_tile(argc, argv);
    if (cmd == "split") return cmd_split(argc, argv);
    if (cmd == "train") return cmd_train(argc, argv);
    if (cmd == "eval") return cmd_eval(argc, argv);
    if (cmd == "infer") return cmd_infer(argc, argv);
    if (cmd == "fuse") return cmd_fuse(argc, argv);
    if (cmd == "params") return cmd_params(argc, argv);
    if (cmd == "gradcheck") return cmd_gradcheck(argc, argv);
    if (cmd == "bench") return cmd_bench(argc, argv);
    std::fprintf(stderr, "unknown subcommand '%s'\n%s", cmd.c_str(), kUsage);
    return 1;
  } catch (const CliError& e) {
    std::fprintf(stderr, "%s\n", e.msg.c_str());
    return e.code;
  }
}
