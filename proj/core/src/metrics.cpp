#include "satqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "satqa/errors.hpp"

namespace satqa {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

namespace {

void check_inputs(const std::vector<double>& a, const std::vector<double>& b, const char* what) {
  if (a.size() != b.size()) throw ContractError(std::string(what) + ": length mismatch");
  if (a.size() < 3) throw InsufficientDataError(std::string(what) + " needs n >= 3, got " + std::to_string(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw DomainError(std::string(what) + ": non-finite input");
}

double pearson(const std::vector<double>& u, const std::vector<double>& v, const char* what) {
  const double n = static_cast<double>(u.size());
  const double mu = std::accumulate(u.begin(), u.end(), 0.0) / n;
  const double mv = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double suv = 0.0, suu = 0.0, svv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double du = u[i] - mu, dv = v[i] - mv;
    suv += du * dv;
    suu += du * du;
    svv += dv * dv;
  }
  if (suu == 0.0 || svv == 0.0) throw DomainError(std::string(what) + " is undefined for a constant input");
  return std::clamp(suv / std::sqrt(suu * svv), -1.0, 1.0);
}

bool has_ties(const std::vector<double>& r) {
  for (double x : r)
    if (x != std::floor(x)) return true;
  return false;
}

}  // namespace

double srocc(const std::vector<double>& pred, const std::vector<double>& gt) {
  check_inputs(pred, gt, "srocc");
  const auto rp = average_ranks(pred), rg = average_ranks(gt);
  if (std::all_of(rp.begin(), rp.end(), [&](double x) { return x == rp[0]; }) ||
      std::all_of(rg.begin(), rg.end(), [&](double x) { return x == rg[0]; }))
    throw DomainError("srocc is undefined for a constant input");
  if (has_ties(rp) || has_ties(rg)) return pearson(rp, rg, "srocc");
  const double n = static_cast<double>(pred.size());
  double d2 = 0.0;
  for (std::size_t i = 0; i < rp.size(); ++i) d2 += (rp[i] - rg[i]) * (rp[i] - rg[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

double plcc(const std::vector<double>& pred, const std::vector<double>& gt) {
  check_inputs(pred, gt, "plcc");
  return pearson(pred, gt, "plcc");
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j = {{"dataset", dataset}, {"protocol", protocol}, {"srocc", srocc}, {"plcc", plcc},
                      {"n", n},             {"polarity", polarity}, {"ties", "average_rank_pearson"},
                      {"plcc_mapping", "none"}};
  j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json("mean");
  if (srocc_std) j["srocc_std"] = *srocc_std;
  if (plcc_std) j["plcc_std"] = *plcc_std;
  nlohmann::json pf = nlohmann::json::object();
  for (const auto& [f, m] : per_family) {
    nlohmann::json e = {{"n", m.n}};
    e["srocc"] = m.srocc ? nlohmann::json(*m.srocc) : nlohmann::json("insufficient");
    e["plcc"] = m.plcc ? nlohmann::json(*m.plcc) : nlohmann::json("insufficient");
    pf[f] = e;
  }
  j["per_family"] = pf;
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.dataset = j.at("dataset").get<std::string>();
  r.protocol = j.at("protocol").get<std::string>();
  if (j.at("seed").is_number()) r.seed = j.at("seed").get<long long>();
  r.srocc = j.at("srocc").get<double>();
  r.plcc = j.at("plcc").get<double>();
  r.n = j.at("n").get<int>();
  r.polarity = j.value("polarity", r.polarity);
  if (j.contains("srocc_std")) r.srocc_std = j["srocc_std"].get<double>();
  if (j.contains("plcc_std")) r.plcc_std = j["plcc_std"].get<double>();
  if (j.contains("per_family"))
    for (auto& [f, e] : j["per_family"].items()) {
      FamilyMetric m;
      m.n = e.at("n").get<int>();
      if (e.at("srocc").is_number()) m.srocc = e["srocc"].get<double>();
      if (e.at("plcc").is_number()) m.plcc = e["plcc"].get<double>();
      r.per_family[f] = m;
    }
  return r;
}

MetricReport aggregate_reports(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw InsufficientDataError("no reports to aggregate");
  MetricReport m;
  m.dataset = reports.front().dataset;
  m.protocol = reports.front().protocol;
  m.polarity = reports.front().polarity;
  const double k = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    m.srocc += r.srocc / k;
    m.plcc += r.plcc / k;
    m.n = r.n;
  }
  double vs = 0.0, vp = 0.0;
  for (const auto& r : reports) {
    vs += (r.srocc - m.srocc) * (r.srocc - m.srocc) / k;
    vp += (r.plcc - m.plcc) * (r.plcc - m.plcc) / k;
  }
  m.srocc_std = std::sqrt(vs);
  m.plcc_std = std::sqrt(vp);
  std::map<std::string, std::vector<const FamilyMetric*>> fam;
  for (const auto& r : reports)
    for (const auto& [f, v] : r.per_family) fam[f].push_back(&v);
  for (const auto& [f, list] : fam) {
    FamilyMetric agg;
    agg.n = list.front()->n;
    double s = 0.0, p = 0.0;
    int ns = 0, np = 0;
    for (const auto* v : list) {
      if (v->srocc) s += *v->srocc, ++ns;
      if (v->plcc) p += *v->plcc, ++np;
    }
    if (ns) agg.srocc = s / ns;
    if (np) agg.plcc = p / np;
    m.per_family[f] = agg;
  }
  return m;
}

std::map<std::string, FamilyMetric> per_family_metrics(const std::vector<double>& pred, const std::vector<double>& gt,
                                                       const std::vector<std::string>& family) {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    groups[family[i]].first.push_back(pred[i]);
    groups[family[i]].second.push_back(gt[i]);
  }
  std::map<std::string, FamilyMetric> out;
  for (const auto& [f, g] : groups) {
    FamilyMetric m;
    m.n = static_cast<int>(g.first.size());
    if (m.n >= 3) {
      try {
        m.srocc = srocc(g.first, g.second);
        m.plcc = plcc(g.first, g.second);
      } catch (const DomainError&) {
        m.srocc.reset();
        m.plcc.reset();
      }
    }
    out[f] = m;
  }
  return out;
}

}  // namespace satqa
