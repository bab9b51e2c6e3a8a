#include "osp3d/io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace osp3d {
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace {

std::ofstream open_out(const fs::path& path, bool binary = true) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  require(out.good(), ErrorCode::kIo, "cannot open for writing: " + path.string());
  return out;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <class T>
  T pod() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  void raw(void* dst, std::size_t n) {
    require(n <= bytes_.size() - pos_, ErrorCode::kFormat, what_ + ": truncated file");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  void f32_array(std::vector<double>& out, std::size_t n) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = pod<float>();
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }
  const std::string& bytes() const { return bytes_; }

 private:
  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

template <class T>
void put(std::string& buf, T v) {
  char tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  buf.append(tmp, sizeof(T));
}

void put_f32(std::string& buf, const std::vector<double>& v) {
  for (double x : v) put(buf, static_cast<float>(x));
}

// Parses a PNM header: magic, then `fields` whitespace-separated integers
// with '#' comments allowed, then exactly one whitespace byte.
std::vector<long> pnm_header(Reader& r, const char* magic, int fields, const std::string& what) {
  char m[2];
  r.raw(m, 2);
  require(m[0] == magic[0] && m[1] == magic[1], ErrorCode::kFormat,
          what + ": expected " + magic + " header");
  const std::string& b = r.bytes();
  std::size_t p = r.pos();
  std::vector<long> vals;
  while (static_cast<int>(vals.size()) < fields) {
    while (p < b.size() && (std::isspace(static_cast<unsigned char>(b[p])) || b[p] == '#')) {
      if (b[p] == '#')
        while (p < b.size() && b[p] != '\n') ++p;
      else
        ++p;
    }
    require(p < b.size() && std::isdigit(static_cast<unsigned char>(b[p])), ErrorCode::kFormat,
            what + ": malformed header");
    long v = 0;
    while (p < b.size() && std::isdigit(static_cast<unsigned char>(b[p]))) {
      v = v * 10 + (b[p] - '0');
      require(v < (1L << 31), ErrorCode::kFormat, what + ": header value overflow");
      ++p;
    }
    vals.push_back(v);
  }
  require(p < b.size() && std::isspace(static_cast<unsigned char>(b[p])), ErrorCode::kFormat,
          what + ": malformed header");
  r.seek(p + 1);
  return vals;
}

ImageD load_png(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  const std::string bytes = read_bytes(path);
  require(png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()) != 0,
          ErrorCode::kFormat, path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  const bool ok = png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr) != 0;
  const std::string msg = img.message;
  png_image_free(&img);
  require(ok, ErrorCode::kFormat, path.string() + ": " + msg);
  ImageD out(static_cast<int>(img.width), static_cast<int>(img.height), 3);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = buf[i] / 255.0;
  return out;
}

}  // namespace

void save_checkpoint(const GaussianCloud& cloud, const fs::path& path) {
  cloud.validate();
  std::string buf = "OSP3";
  put<std::uint32_t>(buf, kCheckpointVersion);
  put<std::uint64_t>(buf, cloud.size());
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(cloud.feature_dim));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(cloud.sh_degree));
  put_f32(buf, cloud.means);
  put_f32(buf, cloud.rotations);
  put_f32(buf, cloud.log_scales);
  put_f32(buf, cloud.opacity_logits);
  put_f32(buf, cloud.sh_coeffs);
  put_f32(buf, cloud.features);
  auto out = open_out(path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  require(out.good(), ErrorCode::kIo, "write failed: " + path.string());
}

GaussianCloud load_checkpoint(const fs::path& path) {
  const std::string bytes = read_bytes(path);
  Reader r(bytes, path.string());
  char magic[4];
  r.raw(magic, 4);
  require(std::memcmp(magic, "OSP3", 4) == 0, ErrorCode::kFormat,
          path.string() + ": bad checkpoint magic");
  const auto version = r.pod<std::uint32_t>();
  require(version == kCheckpointVersion, ErrorCode::kFormat,
          path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto n = r.pod<std::uint64_t>();
  const auto d = r.pod<std::uint32_t>();
  const auto deg = r.pod<std::uint32_t>();
  require(d >= 1 && d <= 4096 && deg <= kMaxShDegree, ErrorCode::kFormat,
          path.string() + ": bad checkpoint header");
  const std::size_t nb = sh_basis_count(static_cast<int>(deg));
  const std::size_t per_row = 3 + 4 + 3 + 1 + 3 * nb + d;
  require(n <= r.remaining() / (4 * per_row) && r.remaining() == n * per_row * 4,
          ErrorCode::kFormat, path.string() + ": checkpoint size does not match header");
  GaussianCloud c;
  c.feature_dim = static_cast<int>(d);
  c.sh_degree = static_cast<int>(deg);
  r.f32_array(c.means, 3 * n);
  r.f32_array(c.rotations, 4 * n);
  r.f32_array(c.log_scales, 3 * n);
  r.f32_array(c.opacity_logits, n);
  r.f32_array(c.sh_coeffs, 3 * nb * n);
  r.f32_array(c.features, d * n);
  c.validate();
  return c;
}

void save_ply(const GaussianCloud& cloud, const fs::path& path) {
  cloud.validate();
  const int nb = cloud.sh_basis(), d = cloud.feature_dim;
  std::ostringstream s;
  s.precision(9);
  s << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n";
  for (const char* p : {"x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1",
                        "scale_2", "opacity"})
    s << "property float " << p << "\n";
  for (int k = 0; k < 3 * nb; ++k) s << "property float f_sh_" << k << "\n";
  for (int k = 0; k < d; ++k) s << "property float feat_" << k << "\n";
  s << "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < 3; ++k) s << cloud.means[3 * i + k] << ' ';
    for (int k = 0; k < 4; ++k) s << cloud.rotations[4 * i + k] << ' ';
    for (int k = 0; k < 3; ++k) s << cloud.log_scales[3 * i + k] << ' ';
    s << cloud.opacity_logits[i];
    for (int k = 0; k < 3 * nb; ++k) s << ' ' << cloud.sh_coeffs[3 * nb * i + k];
    for (int k = 0; k < d; ++k) s << ' ' << cloud.features[d * i + k];
    s << '\n';
  }
  write_text_file(path, s.str());
}

GaussianCloud load_ply(const fs::path& path, int feature_dim, int sh_degree) {
  std::istringstream in(read_text_file(path));
  const std::string what = path.string();
  std::string line;
  require(std::getline(in, line) && line.rfind("ply", 0) == 0, ErrorCode::kFormat,
          what + ": missing ply magic");
  std::size_t n = 0;
  bool in_vertex = false, ascii = false;
  std::vector<std::string> props;
  while (true) {
    require(static_cast<bool>(std::getline(in, line)), ErrorCode::kFormat,
            what + ": missing end_header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "end_header") break;
    if (tok == "format") {
      std::string f;
      ls >> f;
      ascii = f == "ascii";
    } else if (tok == "element") {
      std::string name;
      long long count = -1;
      ls >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) {
        require(count >= 0, ErrorCode::kFormat, what + ": bad vertex count");
        n = static_cast<std::size_t>(count);
      }
    } else if (tok == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      require(type != "list", ErrorCode::kFormat, what + ": list properties unsupported");
      props.push_back(name);
    }
  }
  require(ascii, ErrorCode::kFormat, what + ": only ASCII PLY is supported");
  std::map<std::string, std::size_t> col;
  for (std::size_t k = 0; k < props.size(); ++k) col[props[k]] = k;
  for (const char* p : {"x", "y", "z"})
    require(col.count(p) != 0, ErrorCode::kFormat, what + ": missing property " + p);

  int sh_found = 0, feat_found = 0;
  while (col.count("f_sh_" + std::to_string(sh_found))) ++sh_found;
  while (col.count("feat_" + std::to_string(feat_found))) ++feat_found;
  if (sh_found > 0) {
    int deg = 0;
    while (deg <= kMaxShDegree && 3 * sh_basis_count(deg) != sh_found) ++deg;
    require(deg <= kMaxShDegree, ErrorCode::kFormat, what + ": SH coefficient count invalid");
    sh_degree = deg;
  }
  if (feat_found > 0) feature_dim = feat_found;

  GaussianCloud c(n, feature_dim, sh_degree);
  const int nb = c.sh_basis();
  std::vector<double> row(props.size());
  auto get = [&](const std::string& name, double fallback) {
    auto it = col.find(name);
    return it == col.end() ? fallback : row[it->second];
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : row)
      require(static_cast<bool>(in >> v), ErrorCode::kFormat, what + ": truncated vertex data");
    for (int k = 0; k < 3; ++k) c.means[3 * i + k] = row[col[std::string(1, char('x' + k))]];
    for (int k = 0; k < 4; ++k)
      c.rotations[4 * i + k] = get("rot_" + std::to_string(k), k == 0 ? 1.0 : 0.0);
    for (int k = 0; k < 3; ++k)
      c.log_scales[3 * i + k] = get("scale_" + std::to_string(k), std::log(0.01));
    c.opacity_logits[i] = get("opacity", logit(0.1));
    if (sh_found > 0) {
      for (int k = 0; k < 3 * nb; ++k)
        c.sh_coeffs[3 * nb * i + k] = row[col["f_sh_" + std::to_string(k)]];
    } else {
      const char* names[] = {"red", "green", "blue"};
      for (int ch = 0; ch < 3; ++ch)
        c.sh_coeffs[3 * nb * i + ch * nb] = (get(names[ch], 127.5) / 255.0 - 0.5) / 0.28209479177387814;
    }
    for (int k = 0; k < feat_found; ++k)
      c.features[feature_dim * i + k] = row[col["feat_" + std::to_string(k)]];
  }
  c.validate();
  return c;
}

void save_ppm(const ImageD& rgb, const fs::path& path) {
  require(rgb.channels == 3, ErrorCode::kContractViolation, "save_ppm: image must be RGB");
  std::string buf = "P6\n" + std::to_string(rgb.width) + " " + std::to_string(rgb.height) + "\n255\n";
  for (double v : rgb.data)
    buf.push_back(static_cast<char>(static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  write_text_file(path, buf);
}

ImageD load_rgb(const fs::path& path) {
  const std::string bytes = read_bytes(path);
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), "\x89PNG", 4) == 0) return load_png(path);
  Reader r(bytes, path.string());
  const auto h = pnm_header(r, "P6", 3, path.string());
  require(h[0] >= 1 && h[1] >= 1 && h[2] >= 1 && h[2] <= 65535, ErrorCode::kFormat,
          path.string() + ": bad P6 header");
  const int bpp = h[2] > 255 ? 2 : 1;
  ImageD img(static_cast<int>(h[0]), static_cast<int>(h[1]), 3);
  require(r.remaining() >= img.data.size() * bpp, ErrorCode::kFormat,
          path.string() + ": truncated file");
  for (double& v : img.data) {
    unsigned val = static_cast<unsigned char>(bytes[r.pos()]);
    if (bpp == 2) val = (val << 8) | static_cast<unsigned char>(bytes[r.pos() + 1]);
    r.seek(r.pos() + bpp);
    v = static_cast<double>(val) / static_cast<double>(h[2]);
  }
  return img;
}

void save_pgm16(const IdMap& ids, const fs::path& path) {
  require(ids.channels == 1, ErrorCode::kContractViolation, "save_pgm16: single channel required");
  std::string buf =
      "P5\n" + std::to_string(ids.width) + " " + std::to_string(ids.height) + "\n65535\n";
  for (std::uint16_t v : ids.data) {
    buf.push_back(static_cast<char>(v >> 8));
    buf.push_back(static_cast<char>(v & 0xff));
  }
  write_text_file(path, buf);
}

IdMap load_pgm(const fs::path& path) {
  const std::string bytes = read_bytes(path);
  Reader r(bytes, path.string());
  const auto h = pnm_header(r, "P5", 3, path.string());
  require(h[0] >= 1 && h[1] >= 1 && h[2] >= 1, ErrorCode::kFormat,
          path.string() + ": bad P5 header");
  require(h[2] <= 65535, ErrorCode::kFormat, path.string() + ": id overflow (maxval > 65535)");
  const int bpp = h[2] > 255 ? 2 : 1;
  IdMap ids(static_cast<int>(h[0]), static_cast<int>(h[1]), 1);
  require(r.remaining() >= ids.data.size() * bpp, ErrorCode::kFormat,
          path.string() + ": truncated file");
  const std::size_t base = r.pos();
  for (std::size_t i = 0; i < ids.data.size(); ++i) {
    unsigned v = static_cast<unsigned char>(bytes[base + bpp * i]);
    if (bpp == 2) v = (v << 8) | static_cast<unsigned char>(bytes[base + 2 * i + 1]);
    require(v <= static_cast<unsigned>(h[2]), ErrorCode::kFormat,
            path.string() + ": sample exceeds maxval");
    ids.data[i] = static_cast<std::uint16_t>(v);
  }
  return ids;
}

void save_pgm8(const Mask& mask, const fs::path& path) {
  require(mask.channels == 1, ErrorCode::kContractViolation, "save_pgm8: single channel required");
  const bool binary = std::all_of(mask.data.begin(), mask.data.end(), [](auto v) { return v <= 1; });
  std::string buf =
      "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  for (std::uint8_t v : mask.data) buf.push_back(static_cast<char>(binary ? v * 255 : v));
  write_text_file(path, buf);
}

void save_ospm(const ImageD& img, const fs::path& path) {
  std::string buf = "OSPM";
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(img.width));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(img.height));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(img.channels));
  put_f32(buf, img.data);
  write_text_file(path, buf);
}

ImageD load_ospm(const fs::path& path) {
  const std::string bytes = read_bytes(path);
  Reader r(bytes, path.string());
  char magic[4];
  r.raw(magic, 4);
  require(std::memcmp(magic, "OSPM", 4) == 0, ErrorCode::kFormat, path.string() + ": bad magic");
  const auto w = r.pod<std::uint32_t>(), h = r.pod<std::uint32_t>(), c = r.pod<std::uint32_t>();
  require(w >= 1 && h >= 1 && c >= 1 && w <= 1u << 16 && h <= 1u << 16 && c <= 1u << 12,
          ErrorCode::kFormat, path.string() + ": bad header");
  ImageD img(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
  require(r.remaining() == img.data.size() * 4, ErrorCode::kFormat,
          path.string() + ": size does not match header");
  r.f32_array(img.data, img.data.size());
  return img;
}

std::string read_text_file(const fs::path& path) { return read_bytes(path); }

void write_text_file(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  require(out.good(), ErrorCode::kIo, "write failed: " + path.string());
}

std::string content_hash(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md.data(), &len) == 1;
  EVP_MD_CTX_free(ctx);
  require(ok, ErrorCode::kIo, "sha1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string file_hash(const fs::path& path) { return content_hash(read_bytes(path)); }

}  // namespace osp3d
