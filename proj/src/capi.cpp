#include "opensplat3d.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>
#include <vector>

#include "osp3d/config.hpp"
#include "osp3d/io.hpp"
#include "osp3d/parallel.hpp"
#include "osp3d/pipeline.hpp"
#include "osp3d/rasterizer.hpp"

struct osp3d_config {
  osp3d::SceneConfig value;
};
struct osp3d_cloud {
  osp3d::GaussianCloud value;
};
struct osp3d_report {
  std::string text;
};

namespace {

thread_local std::string g_last_error;

osp3d_status to_status(osp3d::ErrorCode code) {
  using osp3d::ErrorCode;
  switch (code) {
    case ErrorCode::kOk: return OSP3D_OK;
    case ErrorCode::kInvalidParameter: return OSP3D_INVALID_PARAMETER;
    case ErrorCode::kContractViolation: return OSP3D_CONTRACT_VIOLATION;
    case ErrorCode::kFormat: return OSP3D_FORMAT;
    case ErrorCode::kIo: return OSP3D_IO;
    case ErrorCode::kEmptySelection: return OSP3D_EMPTY_SELECTION;
    case ErrorCode::kUndefined: return OSP3D_UNDEFINED;
    case ErrorCode::kNonFinite: return OSP3D_NON_FINITE;
    case ErrorCode::kUsage: return OSP3D_USAGE;
  }
  return OSP3D_INTERNAL;
}

template <class F>
osp3d_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return OSP3D_OK;
  } catch (const osp3d::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return OSP3D_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return OSP3D_INTERNAL;
}

void need(const void* p, const char* name) {
  osp3d::require(p != nullptr, osp3d::ErrorCode::kInvalidParameter,
                 std::string(name) + " must not be NULL");
}

std::filesystem::path opt_path(const char* p) { return p ? std::filesystem::path(p) : std::filesystem::path(); }

std::filesystem::path req_path(const char* p, const char* name) {
  osp3d::require(p && *p, osp3d::ErrorCode::kUsage, std::string(name) + " is required");
  return p;
}

std::vector<std::string> strings(const char* const* items, size_t count) {
  std::vector<std::string> out;
  if (count) need(items, "string list");
  for (size_t i = 0; i < count; ++i) {
    need(items[i], "string list entry");
    out.emplace_back(items[i]);
  }
  return out;
}

void emit(const osp3d::Json& j, osp3d_report** report) {
  if (report) *report = new osp3d_report{j.dump(1)};
}

}  // namespace

extern "C" {

const char* osp3d_version(void) { return "1.0.0"; }

const char* osp3d_status_name(osp3d_status s) {
  switch (s) {
    case OSP3D_OK: return "ok";
    case OSP3D_INVALID_PARAMETER: return "invalid_parameter";
    case OSP3D_CONTRACT_VIOLATION: return "contract_violation";
    case OSP3D_FORMAT: return "format";
    case OSP3D_IO: return "io";
    case OSP3D_EMPTY_SELECTION: return "empty_selection";
    case OSP3D_UNDEFINED: return "undefined";
    case OSP3D_NON_FINITE: return "non_finite";
    case OSP3D_USAGE: return "usage";
    case OSP3D_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* osp3d_last_error(void) { return g_last_error.c_str(); }

osp3d_status osp3d_set_threads(int threads) {
  return guarded([&] {
    osp3d::require(threads >= 0, osp3d::ErrorCode::kInvalidParameter, "threads must be >= 0");
    osp3d::set_thread_count(threads);
  });
}

osp3d_status osp3d_config_new(osp3d_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new osp3d_config{};
  });
}

void osp3d_config_free(osp3d_config* c) { delete c; }

osp3d_status osp3d_config_load(osp3d_config* c, const char* path) {
  return guarded([&] {
    need(c, "config");
    osp3d::apply_config_text(c->value, osp3d::read_text_file(req_path(path, "config path")));
  });
}

osp3d_status osp3d_config_set(osp3d_config* c, const char* section, const char* key,
                              const char* value) {
  return guarded([&] {
    need(c, "config");
    need(section, "section");
    need(key, "key");
    need(value, "value");
    osp3d::set_config_value(c->value, section, key, value);
  });
}

osp3d_status osp3d_config_apply_env(osp3d_config* c) {
  return guarded([&] {
    need(c, "config");
    osp3d::apply_env_overrides(c->value);
  });
}

osp3d_status osp3d_config_to_ini(const osp3d_config* c, osp3d_report** out) {
  return guarded([&] {
    need(c, "config");
    need(out, "out");
    *out = new osp3d_report{osp3d::config_to_ini(c->value)};
  });
}

osp3d_status osp3d_config_hash(const osp3d_config* c, char out[41]) {
  return guarded([&] {
    need(c, "config");
    need(out, "out");
    const std::string h = osp3d::config_hash(c->value);
    std::memcpy(out, h.c_str(), 41);
  });
}

const char* osp3d_report_text(const osp3d_report* r) { return r ? r->text.c_str() : ""; }

void osp3d_report_free(osp3d_report* r) { delete r; }

void osp3d_synth_options_default(osp3d_synth_options* o) {
  if (!o) return;
  const osp3d::SynthOptions d;
  *o = {d.objects, d.train_views, d.test_views, d.width, d.height, d.gaussians_per_object,
        d.oversegment, d.erode, d.seed};
}

osp3d_status osp3d_synth(const osp3d_synth_options* o, const char* out_dir, osp3d_report** report) {
  return guarded([&] {
    need(o, "options");
    osp3d::SynthOptions s;
    s.objects = o->objects;
    s.train_views = o->train_views;
    s.test_views = o->test_views;
    s.width = o->width;
    s.height = o->height;
    s.gaussians_per_object = o->gaussians_per_object;
    s.oversegment = o->oversegment;
    s.erode = o->erode;
    s.seed = o->seed;
    emit(osp3d::stage_synth(s, req_path(out_dir, "output directory")), report);
  });
}

osp3d_status osp3d_train(const osp3d_config* c, const char* manifest, const char* init,
                         const char* out_dir, osp3d_report** report) {
  return guarded([&] {
    need(c, "config");
    emit(osp3d::stage_train(c->value, req_path(manifest, "training manifest"), opt_path(init),
                            req_path(out_dir, "output directory")),
         report);
  });
}

osp3d_status osp3d_cluster(const osp3d_config* c, const char* checkpoint, const char* out_dir,
                           osp3d_report** report) {
  return guarded([&] {
    need(c, "config");
    emit(osp3d::stage_cluster(c->value, req_path(checkpoint, "checkpoint"),
                              req_path(out_dir, "output directory")),
         report);
  });
}

osp3d_status osp3d_embed(const osp3d_config* c, const char* checkpoint, const char* instances,
                         const char* manifest, const char* embedder, const char* out_dir,
                         osp3d_report** report) {
  return guarded([&] {
    need(c, "config");
    emit(osp3d::stage_embed(c->value, req_path(checkpoint, "checkpoint"),
                            req_path(instances, "instance table"), req_path(manifest, "manifest"),
                            embedder ? embedder : "mock", req_path(out_dir, "output directory")),
         report);
  });
}

osp3d_status osp3d_query(const osp3d_config* c, const char* checkpoint, const char* instances,
                         const char* manifest, const char* embedder, const char* text,
                         const char* out_dir, osp3d_report** report) {
  return guarded([&] {
    need(c, "config");
    osp3d::require(text && *text, osp3d::ErrorCode::kUsage, "query text is required");
    emit(osp3d::stage_query(c->value, req_path(checkpoint, "checkpoint"),
                            req_path(instances, "instance table"), opt_path(manifest),
                            embedder ? embedder : "mock", text,
                            req_path(out_dir, "output directory")),
         report);
  });
}

osp3d_status osp3d_render(const osp3d_config* c, const char* checkpoint, const char* manifest,
                          const char* const* channels, size_t channel_count, const char* clusters,
                          const char* out_dir, osp3d_report** report) {
  return guarded([&] {
    need(c, "config");
    emit(osp3d::stage_render(c->value, req_path(checkpoint, "checkpoint"),
                             req_path(manifest, "manifest"), strings(channels, channel_count),
                             opt_path(clusters), req_path(out_dir, "output directory")),
         report);
  });
}

osp3d_status osp3d_eval(const osp3d_config* c, const char* checkpoint, const char* clusters,
                        const char* test_manifest, const char* gt_points,
                        const char* const* metrics, size_t metric_count, const char* out_dir,
                        osp3d_report** report) {
  return guarded([&] {
    need(c, "config");
    const osp3d::EvalInputs in{req_path(checkpoint, "checkpoint"), opt_path(clusters),
                               opt_path(test_manifest), opt_path(gt_points)};
    emit(osp3d::stage_eval(c->value, in, strings(metrics, metric_count), opt_path(out_dir)), report);
  });
}

osp3d_status osp3d_pipeline(const osp3d_config* c, const char* scene, const char* const* metrics,
                            size_t metric_count, const char* const* queries, size_t query_count,
                            const char* embedder, const char* out_dir, osp3d_report** report) {
  return guarded([&] {
    need(c, "config");
    osp3d::require(scene && *scene, osp3d::ErrorCode::kUsage, "scene is required");
    osp3d::PipelineOptions o;
    o.scene = scene;
    o.metrics = strings(metrics, metric_count);
    o.queries = strings(queries, query_count);
    o.embedder = embedder && *embedder ? embedder : "mock";
    emit(osp3d::run_pipeline(c->value, o, req_path(out_dir, "output directory")), report);
  });
}

osp3d_status osp3d_cloud_load(const char* path, int feature_dim, int sh_degree, osp3d_cloud** out) {
  return guarded([&] {
    need(out, "out");
    const std::filesystem::path p = req_path(path, "path");
    auto* c = new osp3d_cloud{};
    try {
      c->value = p.extension() == ".ply" ? osp3d::load_ply(p, feature_dim, sh_degree)
                                         : osp3d::load_checkpoint(p);
    } catch (...) {
      delete c;
      throw;
    }
    *out = c;
  });
}

osp3d_status osp3d_cloud_save(const osp3d_cloud* c, const char* path) {
  return guarded([&] {
    need(c, "cloud");
    const std::filesystem::path p = req_path(path, "path");
    if (p.extension() == ".ply") osp3d::save_ply(c->value, p);
    else osp3d::save_checkpoint(c->value, p);
  });
}

size_t osp3d_cloud_size(const osp3d_cloud* c) { return c ? c->value.size() : 0; }

int osp3d_cloud_feature_dim(const osp3d_cloud* c) { return c ? c->value.feature_dim : 0; }

void osp3d_cloud_free(osp3d_cloud* c) { delete c; }

osp3d_status osp3d_cloud_render(const osp3d_cloud* c, const osp3d_camera* cam, int f64,
                                double* rgb, double* features) {
  return guarded([&] {
    need(c, "cloud");
    need(cam, "camera");
    need(rgb, "rgb");
    osp3d::Camera k;
    k.fx = cam->fx;
    k.fy = cam->fy;
    k.cx = cam->cx;
    k.cy = cam->cy;
    k.width = cam->width;
    k.height = cam->height;
    for (int i = 0; i < 9; ++i) k.rotation(i / 3, i % 3) = cam->rotation[i];
    for (int i = 0; i < 3; ++i) k.translation[i] = cam->translation[i];
    k.validate();
    osp3d::RenderSettings rs;
    if (f64) rs.precision = osp3d::Precision::kF64;
    unsigned ch = osp3d::channel::kColor;
    if (features) ch |= osp3d::channel::kFeature;
    const osp3d::RenderOutput r = osp3d::render(c->value, k, ch, rs);
    std::copy(r.color.data.begin(), r.color.data.end(), rgb);
    if (features) std::copy(r.feature.data.begin(), r.feature.data.end(), features);
  });
}

}  // extern "C"
