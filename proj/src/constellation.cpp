#include "bfpa/constellation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

namespace bfpa {
namespace {

using json = nlohmann::json;

constexpr double kTieEps = 1e-9;

std::uint32_t gray(std::uint32_t k) { return k ^ (k >> 1); }

Constellation finish(ComplexArray points, std::vector<std::uint32_t> labels,
                     int bits, std::string name) {
  Constellation c{std::move(points), std::move(labels), bits, std::move(name)};
  canonical_sort(c);
  validate(c);
  return c;
}

}  // namespace

void canonical_sort(Constellation& c) {
  const int n = c.size();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& pa = c.points[a];
    const auto& pb = c.points[b];
    if (std::abs(pa.real() - pb.real()) > kTieEps) return pa.real() < pb.real();
    return pa.imag() < pb.imag();
  });
  ComplexArray pts(n);
  std::vector<std::uint32_t> labs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    pts[i] = c.points[order[static_cast<std::size_t>(i)]];
    labs[static_cast<std::size_t>(i)] =
        c.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
  }
  c.points = std::move(pts);
  c.labels = std::move(labs);
}

Constellation make_psk(int bits) {
  if (bits < 1 || bits > 8)
    throw ValidationError("make_psk: bits must be in [1, 8]");
  const int m = 1 << bits;
  // QPSK convention: the 4-point ring is rotated to (+-1 +- j)/sqrt(2).
  const double phase0 = bits == 2 ? 3.14159265358979323846 / 4.0 : 0.0;
  ComplexArray pts(m);
  std::vector<std::uint32_t> labs(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k) {
    double a = phase0 + 2.0 * 3.14159265358979323846 * k / m;
    pts[k] = std::complex<double>(std::cos(a), std::sin(a));
    labs[static_cast<std::size_t>(k)] = gray(static_cast<std::uint32_t>(k));
  }
  // Kill cosine/sine roundoff at the axes so canonical ordering is stable.
  for (int k = 0; k < m; ++k) {
    auto snap = [](double v) { return std::abs(v) < 1e-15 ? 0.0 : v; };
    pts[k] = std::complex<double>(snap(pts[k].real()), snap(pts[k].imag()));
  }
  std::string name = bits == 1 ? "bpsk" : bits == 2 ? "qpsk"
                                        : std::to_string(m) + "psk";
  return finish(std::move(pts), std::move(labs), bits, std::move(name));
}

Constellation make_qam(int bits) {
  if (bits < 2 || bits > 8 || bits % 2 != 0)
    throw ValidationError("make_qam: bits must be even and in [2, 8]");
  const int half = bits / 2;
  const int levels = 1 << half;
  // Per-axis mean square of the odd-integer grid is (L^2 - 1) / 3.
  const double scale =
      1.0 / std::sqrt(2.0 * (static_cast<double>(levels) * levels - 1) / 3.0);
  const int m = 1 << bits;
  ComplexArray pts(m);
  std::vector<std::uint32_t> labs(static_cast<std::size_t>(m));
  int idx = 0;
  for (int i = 0; i < levels; ++i) {
    for (int j = 0; j < levels; ++j) {
      double re = scale * (2 * i - levels + 1);
      double im = scale * (2 * j - levels + 1);
      pts[idx] = std::complex<double>(re, im);
      labs[static_cast<std::size_t>(idx)] =
          (gray(static_cast<std::uint32_t>(i)) << half) |
          gray(static_cast<std::uint32_t>(j));
      ++idx;
    }
  }
  std::string name = std::to_string(m) + "qam";
  return finish(std::move(pts), std::move(labs), bits, std::move(name));
}

double average_energy(const Constellation& c) {
  return c.points.abs2().mean();
}

void validate(const Constellation& c) {
  if (c.bits < 1 || c.bits > 8)
    throw ValidationError("constellation: bits out of range [1, 8]");
  const int m = 1 << c.bits;
  if (c.size() != m)
    throw ValidationError("constellation: point count != 2^bits");
  if (c.labels.size() != static_cast<std::size_t>(m))
    throw ValidationError("constellation: labels size != point count");
  std::vector<bool> seen(static_cast<std::size_t>(m), false);
  for (auto l : c.labels) {
    if (l >= static_cast<std::uint32_t>(m) || seen[l])
      throw ValidationError("constellation: labels not a permutation");
    seen[l] = true;
  }
  if (std::abs(average_energy(c) - 1.0) > 1e-12)
    throw ValidationError("constellation: average energy != 1");
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      if (std::abs(c.points[i] - c.points[j]) < 1e-9)
        throw ValidationError("constellation: duplicate points");
  for (int i = 0; i + 1 < m; ++i) {
    const auto& a = c.points[i];
    const auto& b = c.points[i + 1];
    bool ok = a.real() < b.real() + kTieEps &&
              (std::abs(a.real() - b.real()) > kTieEps || a.imag() < b.imag());
    if (!ok) throw ValidationError("constellation: not in canonical order");
  }
}

std::uint64_t constellation_hash(const Constellation& c) {
  std::uint64_t h = fnv1a64(&c.bits, sizeof(c.bits));
  for (int i = 0; i < c.size(); ++i) {
    double re = c.points[i].real(), im = c.points[i].imag();
    h = fnv1a64(&re, sizeof(re), h);
    h = fnv1a64(&im, sizeof(im), h);
  }
  return h;
}

std::string to_json(const Constellation& c) {
  json j;
  j["format"] = "bfpa-constellation-v1";
  j["name"] = c.name;
  j["bits"] = c.bits;
  json pts = json::array();
  for (int i = 0; i < c.size(); ++i)
    pts.push_back({c.points[i].real(), c.points[i].imag()});
  j["points"] = std::move(pts);
  j["labels"] = c.labels;
  return j.dump(2);
}

Constellation constellation_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("constellation json: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != "bfpa-constellation-v1")
    throw ValidationError("constellation json: bad or missing format tag");
  Constellation c;
  try {
    c.name = j.at("name").get<std::string>();
    c.bits = j.at("bits").get<int>();
    const auto& pts = j.at("points");
    c.points.resize(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i)
      c.points[static_cast<Eigen::Index>(i)] = std::complex<double>(
          pts[i].at(0).get<double>(), pts[i].at(1).get<double>());
    c.labels = j.at("labels").get<std::vector<std::uint32_t>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("constellation json: ") + e.what());
  }
  validate(c);
  return c;
}

std::string input_label(const InputModel& input) {
  if (std::holds_alternative<GaussianInput>(input)) return "gaussian";
  return std::get<Constellation>(input).name;
}

int input_bits(const InputModel& input) {
  if (std::holds_alternative<GaussianInput>(input)) return 0;
  return std::get<Constellation>(input).bits;
}

}  // namespace bfpa
