#include <charconv>
#include <fstream>
#include <sstream>

#include "fsrm/train.h"

namespace fsrm {

namespace {

constexpr std::string_view kMagic = "fsrm-checkpoint";
constexpr int kVersion = 1;

void write_values(std::ostream& out, std::string_view key, const double* data, Eigen::Index n) {
  out << key;
  for (Eigen::Index i = 0; i < n; ++i) out << ' ' << format_double(data[i]);
  out << '\n';
}

void write_stack(std::ostream& out, std::string_view name, const std::vector<Layer>& layers) {
  out << "stack " << name << ' ' << layers.size() << '\n';
  for (const auto& l : layers) {
    out << "layer " << l.w.rows() << ' ' << l.w.cols() << '\n';
    write_values(out, "w", l.w.data(), l.w.size());
    write_values(out, "b", l.b.data(), l.b.size());
  }
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::istringstream line(std::string_view expect_key) {
    std::string text;
    if (!std::getline(in_, text)) fail("unexpected end of file, expected '" + std::string(expect_key) + "'");
    ++line_no_;
    std::istringstream ss(text);
    std::string key;
    ss >> key;
    if (key != expect_key) fail("expected '" + std::string(expect_key) + "', found '" + key + "'");
    return ss;
  }

  std::vector<double> values(std::string_view key, std::size_t count) {
    auto ss = line(key);
    std::vector<double> out;
    std::string tok;
    while (ss >> tok) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) fail("invalid number '" + tok + "'");
      out.push_back(v);
    }
    if (out.size() != count)
      fail("'" + std::string(key) + "' has " + std::to_string(out.size()) + " values, expected " +
           std::to_string(count));
    return out;
  }

  std::vector<Layer> stack(std::string_view name) {
    auto ss = line("stack");
    std::string got;
    std::size_t count = 0;
    ss >> got >> count;
    if (got != name) fail("expected stack '" + std::string(name) + "', found '" + got + "'");
    std::vector<Layer> layers;
    for (std::size_t k = 0; k < count; ++k) {
      auto ls = line("layer");
      Eigen::Index rows = 0, cols = 0;
      ls >> rows >> cols;
      if (rows <= 0 || cols <= 0) fail("bad layer shape");
      Layer l{Matrix(rows, cols), Vector(cols)};
      const auto w = values("w", static_cast<std::size_t>(rows * cols));
      std::copy(w.begin(), w.end(), l.w.data());
      const auto b = values("b", static_cast<std::size_t>(cols));
      std::copy(b.begin(), b.end(), l.b.data());
      layers.push_back(std::move(l));
    }
    return layers;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("checkpoint line " + std::to_string(line_no_) + ": " + what);
  }

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
};

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  model.params.validate();
  std::ostringstream out;
  const auto& p = model.params;
  const auto d = static_cast<Eigen::Index>(p.input_dim());
  out << kMagic << ' ' << kVersion << '\n';
  out << "input_dim " << d << '\n';
  out << "feature_selection " << (p.has_feature_selection() ? 1 : 0) << '\n';
  write_values(out, "mean", model.standardizer.mean.data(), model.standardizer.mean.size());
  write_values(out, "scale", model.standardizer.scale.data(), model.standardizer.scale.size());
  if (p.has_feature_selection()) write_values(out, "feature_weights", p.feature_weights.data(), d);
  write_stack(out, "rep", p.rep_layers);
  write_stack(out, "treat", p.treat_head);
  write_stack(out, "out0", p.out_head0);
  write_stack(out, "out1", p.out_head1);

  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot write checkpoint " + path.string());
  file << out.str();
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ParseError("cannot open checkpoint " + path.string());
  Reader r(file);
  Model m;
  {
    auto ss = r.line(kMagic);
    int version = 0;
    ss >> version;
    if (version != kVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  }
  std::size_t d = 0;
  r.line("input_dim") >> d;
  int fsl = 0;
  r.line("feature_selection") >> fsl;
  m.standardizer.mean = to_vector(r.values("mean", d));
  m.standardizer.scale = to_vector(r.values("scale", d));
  if (fsl) m.params.feature_weights = to_vector(r.values("feature_weights", d));
  m.params.rep_layers = r.stack("rep");
  m.params.treat_head = r.stack("treat");
  m.params.out_head0 = r.stack("out0");
  m.params.out_head1 = r.stack("out1");
  try {
    m.params.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (m.params.input_dim() != d) throw ParseError(path.string() + ": input_dim does not match layers");
  return m;
}

}  // namespace fsrm
