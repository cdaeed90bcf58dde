#include "macunet/macunet.h"

#include <cstring>
#include <string>

#include "macu/checkpoint.hpp"
#include "macu/train.hpp"
#include "macu/verify.hpp"

struct macu_net {
  macu::Network<float> net;
};

namespace {

thread_local std::string g_error;

macu_status fail(macu_status s, const char* msg) {
  g_error = msg ? msg : "";
  return s;
}

template <typename F>
macu_status guarded(F&& fn) {
  try {
    fn();
    g_error.clear();
    return MACU_OK;
  } catch (const macu::ShapeError& e) {
    return fail(MACU_ERR_SHAPE, e.what());
  } catch (const macu::IoError& e) {
    return fail(MACU_ERR_IO, e.what());
  } catch (const macu::FormatError& e) {
    return fail(MACU_ERR_FORMAT, e.what());
  } catch (const macu::ConfigError& e) {
    return fail(MACU_ERR_CONFIG, e.what());
  } catch (const macu::ChecksumError& e) {
    return fail(MACU_ERR_CHECKSUM, e.what());
  } catch (const macu::NumericError& e) {
    return fail(MACU_ERR_NUMERIC, e.what());
  } catch (const macu::ValueError& e) {
    return fail(MACU_ERR_ARGUMENT, e.what());
  } catch (const std::exception& e) {
    return fail(MACU_ERR_UNKNOWN, e.what());
  }
}

macu_status need(bool ok, const char* what) {
  return ok ? MACU_OK : fail(MACU_ERR_ARGUMENT, what);
}

macu::NetworkConfig to_cfg(const macu_net_config* c) {
  if (!c) throw macu::ValueError("config pointer is null");
  if (!c->variant) throw macu::ValueError("config variant is null");
  macu::NetworkConfig cfg;
  cfg.variant = macu::parse_variant(c->variant);
  cfg.levels = c->levels;
  cfg.base_width = c->base_width;
  cfg.classes = c->classes;
  cfg.in_channels = c->in_channels;
  cfg.cab_ratio = c->cab_ratio;
  cfg.validate();
  return cfg;
}

// Copies text into buf when it fits; *needed always gets size incl. NUL.
void copy_out(const std::string& text, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = text.size() + 1;
  if (buf && cap >= text.size() + 1) {
    std::memcpy(buf, text.c_str(), text.size() + 1);
  } else if (buf && cap > 0) {
    buf[0] = '\0';
  }
}

std::vector<macu::Sample<float>> load_subset(const std::string& data_dir,
                                             const macu::SplitAssignment& split,
                                             macu::SplitSet which, int classes) {
  std::vector<macu::Sample<float>> out;
  for (const auto& stem : macu::stems_in_set(split, which)) {
    macu::TilePair t;
    t.image = macu::load_image(data_dir, stem);
    t.mask = macu::load_mask(data_dir, stem);
    t.stem = stem;
    out.push_back(macu::to_sample<float>(t, classes));
  }
  return out;
}

template <typename T>
std::vector<macu::FitLogRow> fit_from_dir(macu::Network<T>& net,
                                          const std::string& data_dir,
                                          const macu::SplitAssignment& split,
                                          const macu::FitOptions& fo) {
  std::vector<macu::Sample<T>> train_set, val_set;
  for (const auto& stem : macu::stems_in_set(split, macu::SplitSet::train)) {
    macu::TilePair t;
    t.image = macu::load_image(data_dir, stem);
    t.mask = macu::load_mask(data_dir, stem);
    t.stem = stem;
    train_set.push_back(macu::to_sample<T>(t, net.cfg.classes));
  }
  for (const auto& stem : macu::stems_in_set(split, macu::SplitSet::val)) {
    macu::TilePair t;
    t.image = macu::load_image(data_dir, stem);
    t.mask = macu::load_mask(data_dir, stem);
    t.stem = stem;
    val_set.push_back(macu::to_sample<T>(t, net.cfg.classes));
  }
  return macu::fit(net, train_set, val_set, fo);
}

}  // namespace

extern "C" {

const char* macu_version(void) { return "0.1.0"; }

const char* macu_status_name(macu_status s) {
  switch (s) {
    case MACU_OK: return "ok";
    case MACU_ERR_ARGUMENT: return "argument";
    case MACU_ERR_IO: return "io";
    case MACU_ERR_FORMAT: return "format";
    case MACU_ERR_SHAPE: return "shape";
    case MACU_ERR_CONFIG: return "config";
    case MACU_ERR_CHECKSUM: return "checksum";
    case MACU_ERR_NUMERIC: return "numeric";
    case MACU_ERR_UNKNOWN: return "unknown";
  }
  return "invalid";
}

const char* macu_last_error(void) { return g_error.c_str(); }

macu_status macu_net_create(const macu_net_config* cfg, uint64_t seed,
                            macu_net** out) {
  if (auto s = need(out != nullptr, "out pointer is null")) return s;
  return guarded([&] {
    auto net = macu::build_network<float>(to_cfg(cfg), seed);
    *out = new macu_net{std::move(net)};
  });
}

void macu_net_destroy(macu_net* net) { delete net; }

macu_status macu_net_fuse(macu_net* net) {
  if (auto s = need(net != nullptr, "net handle is null")) return s;
  return guarded([&] { net->net.fuse(); });
}

int macu_net_is_fused(const macu_net* net) {
  return net && net->net.fused_ready ? 1 : 0;
}

macu_status macu_net_config_of(const macu_net* net, macu_net_config* cfg) {
  if (auto s = need(net && cfg, "null pointer")) return s;
  const auto& c = net->net.cfg;
  cfg->variant = macu::variant_name(c.variant);
  cfg->levels = c.levels;
  cfg->base_width = c.base_width;
  cfg->classes = c.classes;
  cfg->in_channels = c.in_channels;
  cfg->cab_ratio = c.cab_ratio;
  return MACU_OK;
}

macu_status macu_net_param_count(const macu_net* net, int fused,
                                 uint64_t* out) {
  if (auto s = need(net && out, "null pointer")) return s;
  return guarded([&] {
    auto& n = const_cast<macu_net*>(net)->net;
    const auto view = fused ? macu::ParamView::fused : macu::ParamView::unfused;
    if (fused && !n.fused_ready) n.fuse();
    *out = uint64_t(macu::count_params(n, view));
  });
}

macu_status macu_net_param_report(const macu_net* net, int fused, char* buf,
                                  size_t cap, size_t* needed) {
  if (auto s = need(net != nullptr, "net handle is null")) return s;
  return guarded([&] {
    auto& n = const_cast<macu_net*>(net)->net;
    const auto view = fused ? macu::ParamView::fused : macu::ParamView::unfused;
    if (fused && !n.fused_ready) n.fuse();
    std::vector<macu::ModuleCount> table;
    const int64_t total = macu::count_params(n, view, &table);
    std::string text = "module,params\n";
    for (const auto& row : table)
      text += row.module + "," + std::to_string(row.count) + "\n";
    text += "total," + std::to_string(total) + "\n";
    copy_out(text, buf, cap, needed);
  });
}

macu_status macu_net_save(const macu_net* net, const char* path, int fused) {
  if (auto s = need(net && path, "null pointer")) return s;
  return guarded([&] {
    auto& n = const_cast<macu_net*>(net)->net;
    macu::save_checkpoint(n, path,
                          fused ? macu::ParamView::fused
                                : macu::ParamView::unfused);
  });
}

macu_status macu_net_load(const char* path, macu_net** out) {
  if (auto s = need(path && out, "null pointer")) return s;
  return guarded([&] {
    auto net = macu::load_checkpoint(path);
    *out = new macu_net{std::move(net)};
  });
}

macu_status macu_synth(const char* out_dir, int32_t count, int32_t size,
                       int32_t classes, uint64_t seed) {
  if (auto s = need(out_dir != nullptr, "out_dir is null")) return s;
  return guarded([&] {
    macu::SynthOptions o;
    o.count = count;
    o.size = size;
    o.classes = classes;
    o.seed = seed;
    for (const auto& t : macu::synth_generate(o))
      macu::save_pair(out_dir, t.stem, t.image, &t.mask);
  });
}

macu_status macu_tile(const char* in_dir, const char* out_dir, int32_t patch,
                      uint64_t* patches_out) {
  if (auto s = need(in_dir && out_dir, "null pointer")) return s;
  return guarded([&] {
    uint64_t total = 0;
    for (const auto& stem : macu::list_stems(in_dir)) {
      const auto img = macu::load_image(in_dir, stem);
      const auto mask = macu::load_mask(in_dir, stem);
      for (const auto& t : macu::tile_pair(img, mask, stem, patch)) {
        macu::save_pair(out_dir, t.stem, t.image, &t.mask);
        ++total;
      }
    }
    if (patches_out) *patches_out = total;
  });
}

macu_status macu_split(const char* data_dir, uint64_t seed,
                       const char* out_file, uint64_t* train_out,
                       uint64_t* val_out, uint64_t* test_out) {
  if (auto s = need(data_dir && out_file, "null pointer")) return s;
  return guarded([&] {
    auto stems = macu::list_stems(data_dir);
    auto a = macu::split_dataset(std::move(stems), 0.6, 0.2, 0.2, seed);
    macu::write_split_file(out_file, a);
    uint64_t counts[3] = {0, 0, 0};
    for (auto s : a.sets) ++counts[int(s)];
    if (train_out) *train_out = counts[0];
    if (val_out) *val_out = counts[1];
    if (test_out) *test_out = counts[2];
  });
}

macu_status macu_train(const macu_net_config* cfg,
                       const macu_train_options* opt, const char* data_dir,
                       const char* split_file, const char* ckpt_out,
                       const char* log_csv) {
  if (auto s = need(opt && data_dir && split_file && ckpt_out, "null pointer"))
    return s;
  return guarded([&] {
    const auto ncfg = to_cfg(cfg);
    const std::string precision = opt->precision ? opt->precision : "f32";
    if (precision != "f32" && precision != "f64")
      throw macu::ValueError("precision must be f32 or f64, got " + precision);
    macu::FitOptions fo;
    fo.epochs = opt->epochs;
    fo.batch_size = opt->batch_size;
    fo.seed = opt->seed;
    fo.lr0 = opt->lr;
    fo.lr_min = opt->lr_min;
    fo.max_steps = opt->max_steps;
    const auto split = macu::read_split_file(split_file);

    std::vector<macu::FitLogRow> log;
    macu::Network<float> out_net = macu::build_network<float>(ncfg, opt->seed);
    if (precision == "f64") {
      auto net64 = macu::build_network<double>(ncfg, opt->seed);
      log = fit_from_dir(net64, data_dir, split, fo);
      auto src = net64.params(macu::ParamView::unfused);
      auto dst = out_net.params(macu::ParamView::unfused);
      for (size_t i = 0; i < src.size(); ++i) {
        auto& from = src[i].var.value();
        auto& to = dst[i].var.value();
        for (size_t j = 0; j < to.v.size(); ++j) to.v[j] = float(from.v[j]);
      }
    } else {
      log = fit_from_dir(out_net, data_dir, split, fo);
    }
    macu::save_checkpoint(out_net, ckpt_out, macu::ParamView::unfused);
    if (log_csv) {
      const std::string csv = macu::fit_log_csv(log);
      macu::write_file(log_csv, std::vector<uint8_t>(csv.begin(), csv.end()));
    }
  });
}

macu_status macu_evaluate(const char* ckpt, const char* data_dir,
                          const char* split_file, const char* subset,
                          char* buf, size_t cap, size_t* needed) {
  if (auto s = need(ckpt && data_dir && split_file && subset, "null pointer"))
    return s;
  return guarded([&] {
    auto net = macu::load_checkpoint(ckpt);
    const auto split = macu::read_split_file(split_file);
    const auto which = macu::parse_split_set(subset);
    const auto set = load_subset(data_dir, split, which, net.cfg.classes);
    if (set.empty())
      throw macu::ValueError(std::string("subset ") + subset + " is empty");
    const auto cm = macu::evaluate_network(net, set, 8, net.fused_only);
    copy_out(macu::format_report(macu::compute_metrics(cm)), buf, cap, needed);
  });
}

macu_status macu_infer_file(const char* ckpt, const char* image,
                            const char* out_pgm, const char* color_ppm,
                            int use_fused, int64_t* mismatch_out) {
  if (auto s = need(ckpt && image && out_pgm, "null pointer")) return s;
  return guarded([&] {
    auto net = macu::load_checkpoint(ckpt);
    const auto img = macu::decode_ppm(macu::read_file(image));
    const auto x = macu::image_to_tensor<float>(img);
    const bool fused = use_fused != 0 || net.fused_only;
    if (fused && !net.fused_ready) net.fuse();
    const auto pred = macu::predict_mask(net, x, fused);
    int64_t mismatch = -1;
    if (use_fused && !net.fused_only) {
      const auto plain = macu::predict_mask(net, x, false);
      mismatch = 0;
      for (size_t i = 0; i < pred.v.size(); ++i)
        if (pred.v[i] != plain.v[i]) ++mismatch;
    }
    macu::write_file(out_pgm, macu::encode_pgm(macu::mask_to_pgm(pred)));
    if (color_ppm)
      macu::write_file(color_ppm,
                       macu::encode_ppm(macu::colorize_prediction(
                           pred, macu::palette(net.cfg.classes))));
    if (mismatch_out) *mismatch_out = mismatch;
  });
}

macu_status macu_fuse_file(const char* ckpt_in, const char* ckpt_out,
                           uint64_t* params_before, uint64_t* params_after,
                           double* mac_ratio) {
  if (auto s = need(ckpt_in && ckpt_out, "null pointer")) return s;
  return guarded([&] {
    auto net = macu::load_checkpoint(ckpt_in);
    if (net.fused_only)
      throw macu::ConfigError("checkpoint is already fused");
    const uint64_t before =
        uint64_t(macu::count_params(net, macu::ParamView::unfused));
    net.fuse();
    const uint64_t after =
        uint64_t(macu::count_params(net, macu::ParamView::fused));
    macu::save_checkpoint(net, ckpt_out, macu::ParamView::fused);
    if (params_before) *params_before = before;
    if (params_after) *params_after = after;
    if (mac_ratio) {
      const auto t = macu::mac_totals(macu::mac_report(net.cfg, 256, 256));
      *mac_ratio = double(t.block_fused) / double(t.block_unfused);
    }
  });
}

macu_status macu_gradcheck(double tol, int* all_pass, char* buf, size_t cap,
                           size_t* needed) {
  if (auto s = need(all_pass != nullptr, "all_pass is null")) return s;
  return guarded([&] {
    const auto results = macu::run_gradient_suite(tol, 1e-5, true);
    std::string text;
    bool ok = true;
    char line[160];
    for (const auto& r : results) {
      std::snprintf(line, sizeof line, "%-24s max_rel_err=%.3e tol=%.1e %s\n",
                    r.name.c_str(), r.err, r.tol, r.pass ? "pass" : "FAIL");
      text += line;
      ok = ok && r.pass;
    }
    *all_pass = ok ? 1 : 0;
    copy_out(text, buf, cap, needed);
  });
}

macu_status macu_bench(const macu_net_config* cfg, int32_t size, int32_t reps,
                       macu_bench_result* out) {
  if (auto s = need(out != nullptr, "out pointer is null")) return s;
  return guarded([&] {
    const auto r = macu::run_bench(to_cfg(cfg), size, reps);
    out->median_ms_unfused = r.median_ms_unfused;
    out->median_ms_fused = r.median_ms_fused;
    out->macs_unfused = r.macs.unfused;
    out->macs_fused = r.macs.fused;
    out->acb_macs_unfused = r.macs.block_unfused;
    out->acb_macs_fused = r.macs.block_fused;
  });
}

}  // extern "C"
