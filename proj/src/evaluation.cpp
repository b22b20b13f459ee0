#include "kpinr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace kpinr {

torch::Tensor crop_eval_region(torch::Tensor const &img)
{
  if (img.dim() < 1 || img.size(0) < 4) { throw std::invalid_argument("crop_eval_region: height must be >= 4"); }
  int64_t const H = img.size(0);
  int64_t const begin = H / 4;
  int64_t const end = (3 * H) / 4;
  return img.narrow(0, begin, end - begin);
}

double psnr(torch::Tensor const &x, torch::Tensor const &ref)
{
  if (!x.sizes().equals(ref.sizes())) { throw std::invalid_argument("psnr: shape mismatch"); }
  auto const r = ref.to(torch::kDouble);
  double const peak = r.max().item<double>();
  if (!(peak > 0)) { throw std::invalid_argument("psnr: reference must have a positive maximum"); }
  double const mse = (x.to(torch::kDouble) - r).square().mean().item<double>();
  if (mse == 0.0) { return std::numeric_limits<double>::infinity(); }
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

torch::Tensor gaussian_window(int64_t size, double sigma)
{
  auto g = torch::empty({size}, torch::kDouble);
  auto acc = g.accessor<double, 1>();
  double const c = double(size - 1) / 2.0;
  for (int64_t i = 0; i < size; ++i) { acc[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma)); }
  g /= g.sum();
  return g.unsqueeze(1) * g.unsqueeze(0);
}

torch::Tensor filter_valid(torch::Tensor const &img2d, torch::Tensor const &win)
{
  return torch::conv2d(img2d.unsqueeze(0).unsqueeze(0), win.unsqueeze(0).unsqueeze(0)).squeeze(0).squeeze(0);
}

} // namespace

double ssim(torch::Tensor const &x, torch::Tensor const &ref)
{
  if (!x.sizes().equals(ref.sizes()) || x.dim() != 3) { throw std::invalid_argument("ssim: expected matching [H, W, T]"); }
  constexpr int64_t win_size = 7;
  if (x.size(0) < win_size || x.size(1) < win_size) { throw std::invalid_argument("ssim: image smaller than the 7x7 window"); }
  auto const xd = x.to(torch::kDouble);
  auto const rd = ref.to(torch::kDouble);
  double const range = rd.max().item<double>();
  double const c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  auto const win = gaussian_window(win_size, 1.5);
  double total = 0.0;
  for (int64_t t = 0; t < x.size(2); ++t) {
    auto const a = xd.select(2, t), b = rd.select(2, t);
    auto const mu_a = filter_valid(a, win), mu_b = filter_valid(b, win);
    auto const var_a = filter_valid(a * a, win) - mu_a * mu_a;
    auto const var_b = filter_valid(b * b, win) - mu_b * mu_b;
    auto const cov = filter_valid(a * b, win) - mu_a * mu_b;
    auto const map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    total += map.mean().item<double>();
  }
  return total / double(x.size(2));
}

namespace {

std::map<std::string, std::function<std::unique_ptr<DistsBackend>()>> &dists_registry()
{
  static std::map<std::string, std::function<std::unique_ptr<DistsBackend>()>> registry;
  return registry;
}

} // namespace

void register_dists_backend(std::string const &name, std::function<std::unique_ptr<DistsBackend>()> factory)
{
  dists_registry()[name] = std::move(factory);
}

std::unique_ptr<DistsBackend> make_dists_backend(std::string const &name)
{
  auto const it = dists_registry().find(name);
  if (it == dists_registry().end()) { return nullptr; }
  return it->second();
}

std::vector<std::string> dists_backends()
{
  std::vector<std::string> names;
  for (auto const &[k, v] : dists_registry()) { names.push_back(k); }
  return names;
}

std::vector<torch::Tensor> PixelPyramidBackend::features(torch::Tensor const &frame) const
{
  auto const f = frame.to(torch::kDouble).unsqueeze(0).unsqueeze(0);
  std::vector<torch::Tensor> stages{f.squeeze(0)};
  for (int64_t k : {2, 4}) {
    if (frame.size(0) >= k && frame.size(1) >= k) { stages.push_back(torch::avg_pool2d(f, k).squeeze(0)); }
  }
  return stages;
}

std::optional<double> dists(torch::Tensor const &x, torch::Tensor const &ref, DistsBackend const *backend)
{
  if (backend == nullptr) { return std::nullopt; }
  if (!x.sizes().equals(ref.sizes()) || x.dim() != 3) { throw std::invalid_argument("dists: expected matching [H, W, T]"); }
  constexpr double c1 = 1e-6, c2 = 1e-6;
  double total = 0.0;
  for (int64_t t = 0; t < x.size(2); ++t) {
    auto const fx = backend->features(x.select(2, t));
    auto const fr = backend->features(ref.select(2, t));
    int64_t channels = 0;
    for (auto const &s : fx) { channels += s.size(0); }
    // Uniform alpha/beta: each of the 2 * channels terms weighs 1 / (2 * channels).
    double sim = 0.0;
    for (size_t j = 0; j < fx.size(); ++j) {
      auto const a = fx[j].flatten(1), b = fr[j].flatten(1);
      auto const ma = a.mean(1), mb = b.mean(1);
      auto const va = (a - ma.unsqueeze(1)).square().mean(1), vb = (b - mb.unsqueeze(1)).square().mean(1);
      auto const cov = ((a - ma.unsqueeze(1)) * (b - mb.unsqueeze(1))).mean(1);
      auto const l = (2 * ma * mb + c1) / (ma.square() + mb.square() + c1);
      auto const s = (2 * cov + c2) / (va + vb + c2);
      sim += (l + s).sum().item<double>() / (2.0 * double(channels));
    }
    total += sim;
  }
  return total / double(x.size(2));
}

WilcoxonResult wilcoxon_signed_rank(std::vector<double> const &a, std::vector<double> const &b)
{
  if (a.size() != b.size()) { throw std::invalid_argument("wilcoxon: samples must be paired"); }
  std::vector<double> diff;
  for (size_t i = 0; i < a.size(); ++i) {
    double const d = a[i] - b[i];
    if (d != 0.0) { diff.push_back(d); }
  }
  WilcoxonResult res;
  res.n = int64_t(diff.size());
  if (diff.empty()) {
    res.warning = "all differences are zero";
    return res;
  }
  if (res.n < 5) { throw std::invalid_argument("wilcoxon: need at least 5 non-zero differences"); }

  // Average ranks of |d|, kept doubled so tied ranks stay integral.
  std::vector<size_t> order(diff.size());
  for (size_t i = 0; i < order.size(); ++i) { order[i] = i; }
  std::sort(order.begin(), order.end(), [&](size_t i, size_t j) { return std::abs(diff[i]) < std::abs(diff[j]); });
  std::vector<int64_t> rank2(diff.size());
  double tie_term = 0.0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j + 1 < order.size() && std::abs(diff[order[j + 1]]) == std::abs(diff[order[i]])) { ++j; }
    int64_t const doubled = int64_t(i + 1 + j + 1); // 2 * average of ranks i+1..j+1
    for (size_t k = i; k <= j; ++k) { rank2[order[k]] = doubled; }
    double const ties = double(j - i + 1);
    tie_term += ties * ties * ties - ties;
    i = j + 1;
  }
  int64_t w2 = 0, total2 = 0;
  for (size_t i = 0; i < diff.size(); ++i) {
    total2 += rank2[i];
    if (diff[i] > 0) { w2 += rank2[i]; }
  }
  res.statistic = double(w2) / 2.0;

  if (res.n <= 25) {
    // Distribution of the doubled positive-rank sum over all 2^n sign patterns.
    std::vector<double> ways(size_t(total2 + 1), 0.0);
    ways[0] = 1.0;
    for (auto r : rank2) {
      for (int64_t s = total2; s >= r; --s) { ways[s] += ways[s - r]; }
    }
    double const all = std::ldexp(1.0, int(res.n));
    double lower = 0.0, upper = 0.0;
    for (int64_t s = 0; s <= total2; ++s) {
      if (s <= w2) { lower += ways[s]; }
      if (s >= w2) { upper += ways[s]; }
    }
    res.p = std::min(1.0, 2.0 * std::min(lower, upper) / all);
    res.exact = true;
  } else {
    double const n = double(res.n);
    double const mean = n * (n + 1) / 4.0;
    double const var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0;
    double const z = (res.statistic - mean) / std::sqrt(var);
    res.p = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
  }
  return res;
}

MetricRow evaluate_images(torch::Tensor const &recon_mag, torch::Tensor const &ref_mag, DistsBackend const *backend)
{
  auto const x = crop_eval_region(recon_mag);
  auto const r = crop_eval_region(ref_mag);
  MetricRow row;
  row.psnr_db = psnr(x, r);
  row.ssim = ssim(x, r);
  row.dists = dists(x, r, backend);
  return row;
}

namespace {

std::string format_double(double v, int precision = 10)
{
  if (std::isinf(v)) { return v > 0 ? "inf" : "-inf"; }
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::vector<std::string> split_csv(std::string const &line)
{
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) { out.push_back(cell); }
  if (!line.empty() && line.back() == ',') { out.emplace_back(); }
  return out;
}

double parse_double(std::string const &s)
{
  if (s == "inf") { return std::numeric_limits<double>::infinity(); }
  return std::stod(s);
}

} // namespace

void write_metrics_csv(std::filesystem::path const &path, std::vector<MetricRow> const &rows)
{
  std::ofstream os(path);
  if (!os) { throw std::runtime_error("cannot write " + path.string()); }
  os << "method,subject,view,pattern,R,psnr_db,ssim,dists_or_NA,crop\n";
  for (auto const &r : rows) {
    os << r.method << ',' << r.subject << ',' << r.view << ',' << r.pattern << ',' << format_double(r.R) << ','
       << format_double(r.psnr_db, 17) << ',' << format_double(r.ssim, 17) << ','
       << (r.dists ? format_double(*r.dists, 17) : std::string("NA")) << ",central_half\n";
  }
}

std::vector<MetricRow> read_metrics_csv(std::filesystem::path const &path)
{
  std::ifstream is(path);
  if (!is) { throw std::runtime_error("cannot read " + path.string()); }
  std::string line;
  std::getline(is, line);
  if (line != "method,subject,view,pattern,R,psnr_db,ssim,dists_or_NA,crop") {
    throw std::runtime_error("metrics CSV: unexpected header in " + path.string());
  }
  std::vector<MetricRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) { continue; }
    auto const cells = split_csv(line);
    if (cells.size() != 9) { throw std::runtime_error("metrics CSV: expected 9 columns"); }
    MetricRow r{cells[0], cells[1], cells[2], cells[3], parse_double(cells[4]), parse_double(cells[5]),
                parse_double(cells[6]), std::nullopt};
    if (cells[7] != "NA") { r.dists = parse_double(cells[7]); }
    rows.push_back(r);
  }
  return rows;
}

Stat summarize(std::vector<double> const &values)
{
  Stat s;
  s.n = int64_t(values.size());
  if (values.empty()) { return s; }
  double sum = 0.0;
  for (double v : values) { sum += v; }
  s.mean = sum / double(values.size());
  double sq = 0.0;
  for (double v : values) { sq += (v - s.mean) * (v - s.mean); }
  s.std = std::sqrt(sq / double(values.size()));
  return s;
}

namespace {

using Setting = std::pair<std::string, double>;

std::string format_cell(ReportCell const &c, int precision)
{
  if (!c.available) { return "NA"; }
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision);
  std::ostringstream mean, sd;
  mean << std::fixed << std::setprecision(precision) << c.stat.mean;
  sd << std::fixed << std::setprecision(precision) << c.stat.std;
  if (c.best) {
    os << "**" << mean.str() << " ± " << sd.str() << "**";
  } else {
    os << mean.str() << " ± " << sd.str();
  }
  if (c.dagger) { os << "†"; }
  return os.str();
}

} // namespace

Report make_report(std::vector<MetricRow> const &rows, std::string const &reference_method)
{
  // (pattern, R) -> method -> subject|view -> row
  std::map<Setting, std::map<std::string, std::map<std::string, MetricRow>>> groups;
  std::vector<std::string> method_order;
  for (auto const &r : rows) {
    auto &by_case = groups[{r.pattern, r.R}][r.method];
    auto const key = r.subject + "|" + r.view;
    if (!by_case.emplace(key, r).second) {
      throw std::invalid_argument("make_report: duplicate entry for method " + r.method + ", case " + key);
    }
    if (std::find(method_order.begin(), method_order.end(), r.method) == method_order.end()) {
      method_order.push_back(r.method);
    }
  }

  Report report;
  for (auto const &[setting, methods] : groups) {
    std::vector<ReportRow> block;
    auto const ref_it = methods.find(reference_method);
    for (auto const &method : method_order) {
      auto const it = methods.find(method);
      if (it == methods.end()) { continue; }
      ReportRow row{setting.first, setting.second, method, {}, {}, {}};
      std::vector<double> p, s, d;
      bool all_dists = true;
      for (auto const &[key, r] : it->second) {
        p.push_back(r.psnr_db);
        s.push_back(r.ssim);
        if (r.dists) { d.push_back(*r.dists); } else { all_dists = false; }
      }
      row.psnr.stat = summarize(p);
      row.ssim.stat = summarize(s);
      row.dists.available = all_dists && !d.empty();
      if (row.dists.available) { row.dists.stat = summarize(d); }

      if (ref_it != methods.end() && method != reference_method) {
        auto const &ref_cases = ref_it->second;
        if (ref_cases.size() != it->second.size()) {
          throw std::invalid_argument("make_report: method " + method + " and " + reference_method +
                                      " cover different cases");
        }
        std::vector<double> rp, rs, rd, mp, ms, md;
        for (auto const &[key, r] : it->second) {
          auto const rc = ref_cases.find(key);
          if (rc == ref_cases.end()) { throw std::invalid_argument("make_report: unpaired case " + key); }
          mp.push_back(r.psnr_db);
          ms.push_back(r.ssim);
          rp.push_back(rc->second.psnr_db);
          rs.push_back(rc->second.ssim);
          if (r.dists && rc->second.dists) {
            md.push_back(*r.dists);
            rd.push_back(*rc->second.dists);
          }
        }
        auto test = [](ReportCell &cell, std::vector<double> const &x, std::vector<double> const &y) {
          try {
            auto const w = wilcoxon_signed_rank(x, y);
            cell.p_value = w.p;
            cell.dagger = w.p < kSignificance;
          } catch (std::invalid_argument const &) {
            // Too few non-zero pairs: no test, no dagger.
          }
        };
        test(row.psnr, mp, rp);
        test(row.ssim, ms, rs);
        if (row.dists.available && md.size() == mp.size()) { test(row.dists, md, rd); }
      }
      block.push_back(row);
    }
    auto mark_best = [&](auto member) {
      double best = -std::numeric_limits<double>::infinity();
      for (auto const &r : block) {
        auto const &c = r.*member;
        if (c.available) { best = std::max(best, c.stat.mean); }
      }
      for (auto &r : block) {
        auto &c = r.*member;
        c.best = c.available && c.stat.mean == best && block.size() > 1;
      }
    };
    mark_best(&ReportRow::psnr);
    mark_best(&ReportRow::ssim);
    mark_best(&ReportRow::dists);
    report.rows.insert(report.rows.end(), block.begin(), block.end());
  }

  std::ostringstream text, csv;
  text << "| Sampling | R | Method | PSNR | SSIM | DISTS |\n|---|---|---|---|---|---|\n";
  csv << "pattern,R,method,psnr_mean,psnr_std,psnr_p,ssim_mean,ssim_std,ssim_p,dists_mean,dists_std,dists_p\n";
  auto p_str = [](ReportCell const &c) { return c.p_value ? format_double(*c.p_value, 6) : std::string("NA"); };
  for (auto const &r : report.rows) {
    text << "| " << r.pattern << " | " << format_double(r.R) << " | " << r.method << " | " << format_cell(r.psnr, 2)
         << " | " << format_cell(r.ssim, 4) << " | " << format_cell(r.dists, 4) << " |\n";
    csv << r.pattern << ',' << format_double(r.R) << ',' << r.method << ',' << format_double(r.psnr.stat.mean, 17) << ','
        << format_double(r.psnr.stat.std, 17) << ',' << p_str(r.psnr) << ',' << format_double(r.ssim.stat.mean, 17)
        << ',' << format_double(r.ssim.stat.std, 17) << ',' << p_str(r.ssim) << ','
        << (r.dists.available ? format_double(r.dists.stat.mean, 17) : "NA") << ','
        << (r.dists.available ? format_double(r.dists.stat.std, 17) : "NA") << ',' << p_str(r.dists) << '\n';
  }
  text << "\n† p < .05 (two-sided Wilcoxon signed-rank) against " << reference_method
       << ". DISTS is reported as similarity (1 - distance); NA when no perceptual backend is registered.\n";
  report.text = text.str();
  report.csv = csv.str();
  return report;
}

torch::Tensor xt_strip(torch::Tensor const &mag)
{
  if (mag.dim() != 3) { throw std::invalid_argument("xt_strip: expected [H, W, T]"); }
  return mag.select(1, mag.size(1) / 2).contiguous();
}

void write_pgm(std::filesystem::path const &path, torch::Tensor const &image2d)
{
  if (image2d.dim() != 2) { throw std::invalid_argument("write_pgm: expected a 2-D image"); }
  auto const img = image2d.to(torch::kDouble).contiguous();
  double const peak = img.max().item<double>();
  double const scale = peak > 0 ? 255.0 / peak : 0.0;
  std::ofstream os(path, std::ios::binary);
  if (!os) { throw std::runtime_error("cannot write " + path.string()); }
  int64_t const rows = img.size(0), cols = img.size(1);
  os << "P5\n" << cols << ' ' << rows << "\n255\n";
  auto const acc = img.accessor<double, 2>();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) {
      os.put(char(uint8_t(std::clamp(std::lround(acc[r][c] * scale), 0L, 255L))));
    }
  }
}

} // namespace kpinr
