#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "osp3d/image.hpp"
#include "osp3d/scene.hpp"

namespace osp3d {

constexpr std::uint32_t kCheckpointVersion = 1;

// Binary checkpoint: "OSP3", version u32, N u64, d u32, SH degree u32, then
// means, rotations, log_scales, opacity_logits, sh_coeffs, features as
// little-endian f32.
void save_checkpoint(const GaussianCloud& cloud, const std::filesystem::path& path);
GaussianCloud load_checkpoint(const std::filesystem::path& path);

// ASCII PLY with x,y,z plus rot_*, scale_*, opacity, f_sh_*, feat_* extras.
// On import only x,y,z are required; missing extras get neutral defaults and
// red/green/blue (0..255) become the SH DC term.
void save_ply(const GaussianCloud& cloud, const std::filesystem::path& path);
GaussianCloud load_ply(const std::filesystem::path& path, int feature_dim = 8,
                       int sh_degree = 1);

// 8-bit RGB P6; values are clamped to [0,1] on write.
void save_ppm(const ImageD& rgb, const std::filesystem::path& path);
// Reads P6 (8 or 16 bit) or PNG; returns 3 channels in [0,1].
ImageD load_rgb(const std::filesystem::path& path);

// P5 with maxval 65535, big-endian samples.
void save_pgm16(const IdMap& ids, const std::filesystem::path& path);
// Accepts P5 with maxval <= 65535 (1 or 2 bytes per sample).
IdMap load_pgm(const std::filesystem::path& path);
// 8-bit P5; a binary mask is written as {0,255}.
void save_pgm8(const Mask& mask, const std::filesystem::path& path);

// Raw float dump: "OSPM", width u32, height u32, channels u32, f32 data.
void save_ospm(const ImageD& img, const std::filesystem::path& path);
ImageD load_ospm(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Git blob object id (SHA-1 over "blob <size>\0" + bytes), hex encoded.
std::string content_hash(const std::string& bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace osp3d
