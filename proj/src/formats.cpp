#include "aacv/formats.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace aacv {

// ------------------------------------------------------------------ files

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("short write to " + path.string());
}

// ---------------------------------------------------------------- weights

namespace {

constexpr std::string_view kMagic = "AACV";
constexpr std::uint8_t kVersion = 1;

template <typename U>
void put(std::string& out, U v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, b_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) {
      throw InputError(std::string("weights: truncated while reading ") + what + " at byte " +
                       std::to_string(pos_));
    }
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_weights(const NamedTensors& tensors) {
  std::string out(kMagic);
  put<std::uint8_t>(out, kVersion);
  for (const auto& [name, t] : tensors) {
    if (name.empty() || name.size() > 0xffff) throw InputError("weights: bad tensor name length");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : t.data()) put<float>(out, v);
  }
  return out;
}

NamedTensors decode_weights(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(kMagic.size(), "magic") != kMagic) throw InputError("weights: bad magic");
  const auto version = r.get<std::uint8_t>("version");
  if (version != kVersion) {
    throw InputError("weights: unsupported version " + std::to_string(version));
  }
  NamedTensors out;
  while (!r.done()) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name(r.bytes(len, "name"));
    if (name.empty()) throw InputError("weights: empty tensor name");
    const auto rank = r.get<std::uint8_t>("rank");
    if (rank > 6) throw InputError("weights: tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint32_t>("dims");
      if (d == 0) throw InputError("weights: tensor '" + name + "' has a zero dim");
      n *= d;
    }
    if (n > (bytes.size() - r.pos()) / sizeof(float)) {
      throw InputError("weights: truncated payload for '" + name + "'");
    }
    std::vector<float> data(n);
    auto raw = r.bytes(n * sizeof(float), "payload");
    std::memcpy(data.data(), raw.data(), raw.size());
    if (out.count(name)) throw InputError("weights: repeated tensor '" + name + "'");
    out.emplace(name, Tensor<float>(std::move(shape), std::move(data)));
  }
  return out;
}

void save_weights(const std::filesystem::path& path, const NamedTensors& tensors) {
  write_file(path, encode_weights(tensors));
}

NamedTensors load_weights(const std::filesystem::path& path) {
  try {
    return decode_weights(read_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

NamedTensors collect_weights(const Model<float>& model) {
  NamedTensors out;
  for (const auto& p : model.parameters()) out.emplace(p.name, p.value);
  for (const auto& [name, t] : model.buffers()) out.emplace(name, t);
  return out;
}

void apply_weights(Model<float>& model, const NamedTensors& tensors) {
  std::set<std::string> expected;
  for (const auto& p : model.parameters()) expected.insert(p.name);
  for (const auto& [name, t] : model.buffers()) expected.insert(name);
  for (const auto& [name, t] : tensors) {
    if (!expected.count(name)) throw InputError("weights: unexpected tensor '" + name + "'");
  }
  auto assign = [&](const std::string& name, Tensor<float>& dst) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw InputError("weights: missing tensor '" + name + "'");
    if (it->second.shape() != dst.shape()) {
      throw InputError("weights: tensor '" + name + "' has shape " + to_string(it->second.shape()) +
                       ", model expects " + to_string(dst.shape()));
    }
    dst = it->second;
  };
  for (auto& p : model.parameters()) assign(p.name, p.value);
  for (auto& [name, t] : model.buffers()) assign(name, t);
}

// ------------------------------------------------------------- run config

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename U>
U parse_number(const std::string& v, std::size_t line, const std::string& key) {
  U out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw InputError("config line " + std::to_string(line) + ": bad value '" + v + "' for " + key);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw InputError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(std::string_view(body).substr(0, eq));
    const auto val = trim(std::string_view(body).substr(eq + 1));
    if (key.empty() || val.empty()) {
      throw InputError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    if (!seen.insert(key).second) {
      throw InputError("config line " + std::to_string(line_no) + ": repeated key " + key);
    }
    auto sz = [&] { return parse_number<std::size_t>(val, line_no, key); };
    auto dbl = [&] { return parse_number<double>(val, line_no, key); };
    if (key == "image_size") cfg.net.image_size = sz();
    else if (key == "channels") cfg.net.channels = sz();
    else if (key == "classes") cfg.net.classes = sz();
    else if (key == "stem_width") cfg.net.stem_width = sz();
    else if (key == "blocks") cfg.net.blocks = sz();
    else if (key == "kappa") cfg.net.kappa = dbl();
    else if (key == "upsilon") cfg.net.upsilon = dbl();
    else if (key == "heads") cfg.net.heads = sz();
    else if (key == "encoding") {
      try {
        cfg.net.encoding = parse_encoding(val);
      } catch (const std::exception& e) {
        throw InputError("config line " + std::to_string(line_no) + ": " + e.what());
      }
    } else if (key == "seed") {
      cfg.net.seed = cfg.train.seed = parse_number<std::uint64_t>(val, line_no, key);
    } else if (key == "steps") cfg.train.steps = sz();
    else if (key == "batch") cfg.train.batch = sz();
    else if (key == "lr") cfg.train.lr = dbl();
    else if (key == "momentum") cfg.train.momentum = dbl();
    else if (key == "weight_decay") cfg.train.weight_decay = dbl();
    else throw InputError("config line " + std::to_string(line_no) + ": unknown key " + key);
  }
  cfg.net.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  try {
    return parse_run_config(read_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::string format_run_config(const RunConfig& cfg) {
  std::ostringstream o;
  o << "image_size = " << cfg.net.image_size << "\n"
    << "channels = " << cfg.net.channels << "\n"
    << "classes = " << cfg.net.classes << "\n"
    << "stem_width = " << cfg.net.stem_width << "\n"
    << "blocks = " << cfg.net.blocks << "\n"
    << "kappa = " << format_double(cfg.net.kappa) << "\n"
    << "upsilon = " << format_double(cfg.net.upsilon) << "\n"
    << "heads = " << cfg.net.heads << "\n"
    << "encoding = " << to_string(cfg.net.encoding) << "\n"
    << "seed = " << cfg.net.seed << "\n"
    << "steps = " << cfg.train.steps << "\n"
    << "batch = " << cfg.train.batch << "\n"
    << "lr = " << format_double(cfg.train.lr) << "\n"
    << "momentum = " << format_double(cfg.train.momentum) << "\n"
    << "weight_decay = " << format_double(cfg.train.weight_decay) << "\n";
  return o.str();
}

// ----------------------------------------------------------------- images

namespace {

// Header fields of a binary netpbm file; returns the payload offset.
std::size_t netpbm_header(std::string_view b, std::string_view magic, std::size_t& w,
                          std::size_t& h, std::size_t& maxval) {
  if (b.substr(0, 2) != magic) throw InputError("image: expected " + std::string(magic) + " header");
  std::size_t pos = 2;
  std::size_t fields[3];
  for (auto& f : fields) {
    for (;;) {
      while (pos < b.size() && std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
      if (pos < b.size() && b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const auto start = pos;
    while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos]))) ++pos;
    if (start == pos) throw InputError("image: malformed header");
    std::from_chars(b.data() + start, b.data() + pos, f);
  }
  if (pos >= b.size() || !std::isspace(static_cast<unsigned char>(b[pos]))) {
    throw InputError("image: malformed header");
  }
  ++pos;
  w = fields[0];
  h = fields[1];
  maxval = fields[2];
  if (w == 0 || h == 0) throw InputError("image: zero dimension");
  if (maxval == 0 || maxval > 255) throw InputError("image: only 8-bit maxval is supported");
  return pos;
}

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

Tensor<float> decode_ppm(std::string_view bytes) {
  std::size_t w, h, maxval;
  const auto pos = netpbm_header(bytes, "P6", w, h, maxval);
  if (bytes.size() - pos != w * h * 3) {
    throw InputError("image: expected " + std::to_string(w * h * 3) + " payload bytes, got " +
                     std::to_string(bytes.size() - pos));
  }
  Tensor<float> t(Shape{h, w, 3});
  for (std::size_t i = 0; i < w * h * 3; ++i) {
    t[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<float>(maxval);
  }
  return t;
}

Tensor<float> read_ppm(const std::filesystem::path& path) {
  try {
    return decode_ppm(read_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::string encode_ppm(const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ShapeError("encode_ppm: expected (H, W, 3), got " + to_string(image.shape()));
  }
  std::string out = "P6\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  for (float v : image.data()) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

void write_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
  write_file(path, encode_ppm(image));
}

std::string encode_pgm(const GrayImage& image) {
  if (image.pixels.size() != image.width * image.height || image.pixels.empty()) {
    throw ShapeError("encode_pgm: pixel count does not match dims");
  }
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  return out;
}

GrayImage decode_pgm(std::string_view bytes) {
  std::size_t w, h, maxval;
  const auto pos = netpbm_header(bytes, "P5", w, h, maxval);
  if (bytes.size() - pos != w * h) throw InputError("image: pgm payload size mismatch");
  GrayImage g{w, h, {}};
  g.pixels.assign(reinterpret_cast<const std::uint8_t*>(bytes.data() + pos),
                  reinterpret_cast<const std::uint8_t*>(bytes.data() + bytes.size()));
  return g;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  write_file(path, encode_pgm(image));
}

// -------------------------------------------------------------------- csv

std::string encode_trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = "step,loss,accuracy\n";
  char buf[96];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", r.step, static_cast<double>(r.loss),
                  static_cast<double>(r.accuracy));
    out += buf;
  }
  return out;
}

std::vector<TraceRow> decode_trace_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || trim(line) != "step,loss,accuracy") {
    throw InputError("trace: missing header");
  }
  std::vector<TraceRow> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    TraceRow r;
    double loss, acc;
    char tail;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf%c", &r.step, &loss, &acc, &tail) != 3) {
      throw InputError("trace line " + std::to_string(line_no) + ": malformed row");
    }
    r.loss = static_cast<float>(loss);
    r.accuracy = static_cast<float>(acc);
    out.push_back(r);
  }
  return out;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace) {
  write_file(path, encode_trace_csv(trace));
}

}  // namespace aacv
