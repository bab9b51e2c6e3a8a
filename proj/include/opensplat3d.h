/* OpenSplat3D C interface.
 *
 * Every function returning osp3d_status records a message for the calling
 * thread on failure, readable with osp3d_last_error(). Handles are opaque and
 * released with the matching *_free function. Optional path arguments may be
 * NULL or "".
 */
#ifndef OPENSPLAT3D_H
#define OPENSPLAT3D_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define OSP3D_API __declspec(dllexport)
#else
#define OSP3D_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum osp3d_status {
  OSP3D_OK = 0,
  OSP3D_INVALID_PARAMETER = 1,
  OSP3D_CONTRACT_VIOLATION = 2,
  OSP3D_FORMAT = 3,
  OSP3D_IO = 4,
  OSP3D_EMPTY_SELECTION = 5,
  OSP3D_UNDEFINED = 6,
  OSP3D_NON_FINITE = 7,
  OSP3D_USAGE = 8,
  OSP3D_INTERNAL = 9
} osp3d_status;

typedef struct osp3d_config osp3d_config;
typedef struct osp3d_cloud osp3d_cloud;
typedef struct osp3d_report osp3d_report;

OSP3D_API const char* osp3d_version(void);
OSP3D_API const char* osp3d_status_name(osp3d_status status);
/* Message of the last failure on this thread, "" if none. */
OSP3D_API const char* osp3d_last_error(void);
/* 0 selects the hardware concurrency. */
OSP3D_API osp3d_status osp3d_set_threads(int threads);

/* ---- configuration ---- */
OSP3D_API osp3d_status osp3d_config_new(osp3d_config** out);
OSP3D_API void osp3d_config_free(osp3d_config* config);
OSP3D_API osp3d_status osp3d_config_load(osp3d_config* config, const char* path);
OSP3D_API osp3d_status osp3d_config_set(osp3d_config* config, const char* section, const char* key,
                                        const char* value);
/* Applies OSP3D_<SECTION>_<KEY> environment variables. */
OSP3D_API osp3d_status osp3d_config_apply_env(osp3d_config* config);
/* Canonical INI text of the config as a report handle. */
OSP3D_API osp3d_status osp3d_config_to_ini(const osp3d_config* config, osp3d_report** out);
/* 40 hex digits plus terminator. */
OSP3D_API osp3d_status osp3d_config_hash(const osp3d_config* config, char out[41]);

/* ---- reports (JSON text) ---- */
OSP3D_API const char* osp3d_report_text(const osp3d_report* report);
OSP3D_API void osp3d_report_free(osp3d_report* report);

/* ---- pipeline stages; each writes artifacts and a manifest to out_dir ---- */
typedef struct osp3d_synth_options {
  int objects;
  int train_views;
  int test_views;
  int width;
  int height;
  int gaussians_per_object;
  int oversegment;
  int erode;
  uint64_t seed;
} osp3d_synth_options;

OSP3D_API void osp3d_synth_options_default(osp3d_synth_options* options);
OSP3D_API osp3d_status osp3d_synth(const osp3d_synth_options* options, const char* out_dir,
                                   osp3d_report** report);
/* init: PLY points, an .osp3 checkpoint, or NULL for a default point cube. */
OSP3D_API osp3d_status osp3d_train(const osp3d_config* config, const char* train_manifest,
                                   const char* init, const char* out_dir, osp3d_report** report);
OSP3D_API osp3d_status osp3d_cluster(const osp3d_config* config, const char* checkpoint,
                                     const char* out_dir, osp3d_report** report);
/* embedder: "mock" or the path of a precomputed-embedding index JSON. */
OSP3D_API osp3d_status osp3d_embed(const osp3d_config* config, const char* checkpoint,
                                   const char* instances, const char* manifest,
                                   const char* embedder, const char* out_dir,
                                   osp3d_report** report);
OSP3D_API osp3d_status osp3d_query(const osp3d_config* config, const char* checkpoint,
                                   const char* instances, const char* manifest,
                                   const char* embedder, const char* text, const char* out_dir,
                                   osp3d_report** report);
/* channels: color, feature, variance, alpha, depth, ids. */
OSP3D_API osp3d_status osp3d_render(const osp3d_config* config, const char* checkpoint,
                                    const char* manifest, const char* const* channels,
                                    size_t channel_count, const char* clusters,
                                    const char* out_dir, osp3d_report** report);
/* metrics: psnr, miou3d, ap, miou2d. */
OSP3D_API osp3d_status osp3d_eval(const osp3d_config* config, const char* checkpoint,
                                  const char* clusters, const char* test_manifest,
                                  const char* gt_points, const char* const* metrics,
                                  size_t metric_count, const char* out_dir,
                                  osp3d_report** report);
/* scene: "synth://<N>obj[?options]", a scene directory, or a training manifest. */
OSP3D_API osp3d_status osp3d_pipeline(const osp3d_config* config, const char* scene,
                                      const char* const* metrics, size_t metric_count,
                                      const char* const* queries, size_t query_count,
                                      const char* embedder, const char* out_dir,
                                      osp3d_report** report);

/* ---- Gaussian clouds ---- */
typedef struct osp3d_camera {
  double fx, fy, cx, cy;
  int width, height;
  double rotation[9]; /* world-to-camera, row-major */
  double translation[3];
} osp3d_camera;

/* .osp3 checkpoint or ASCII PLY (feature_dim / sh_degree apply to PLY only). */
OSP3D_API osp3d_status osp3d_cloud_load(const char* path, int feature_dim, int sh_degree,
                                        osp3d_cloud** out);
OSP3D_API osp3d_status osp3d_cloud_save(const osp3d_cloud* cloud, const char* path);
OSP3D_API size_t osp3d_cloud_size(const osp3d_cloud* cloud);
OSP3D_API int osp3d_cloud_feature_dim(const osp3d_cloud* cloud);
OSP3D_API void osp3d_cloud_free(osp3d_cloud* cloud);
/* Renders colour (height*width*3) and, if `features` is non-NULL, the
 * feature map (height*width*feature_dim), row-major. */
OSP3D_API osp3d_status osp3d_cloud_render(const osp3d_cloud* cloud, const osp3d_camera* camera,
                                          int f64, double* rgb, double* features);

#ifdef __cplusplus
}
#endif

#endif /* OPENSPLAT3D_H */
