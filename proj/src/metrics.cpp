#include "mvood/metrics.hpp"

#include "mvood/random.hpp"
#include "mvood/stats.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mvood {

using nlohmann::json;

BinaryMetrics binary_metrics(std::span<const int> pred, std::span<const int> labels) {
  if (pred.empty()) throw std::invalid_argument("binary_metrics: empty input");
  if (pred.size() != labels.size())
    throw std::invalid_argument("binary_metrics: predictions and labels differ in length");
  BinaryMetrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if ((labels[i] != 0 && labels[i] != 1) || (pred[i] != 0 && pred[i] != 1))
      throw std::invalid_argument("binary_metrics: values must be 0 or 1");
    if (pred[i] == 1) (labels[i] == 1 ? m.tp : m.fp)++;
    else (labels[i] == 1 ? m.fn : m.tn)++;
  }
  auto ratio = [](long num, long den, bool& flag) {
    flag = den == 0;
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(pred.size());
  m.precision = ratio(m.tp, m.tp + m.fp, m.undefined_precision);
  m.recall = ratio(m.tp, m.tp + m.fn, m.undefined_recall);
  m.specificity = ratio(m.tn, m.tn + m.fp, m.undefined_specificity);
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

double binary_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U from mid-ranks.
  double pos_rank_sum = 0.0;
  long n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) pos_rank_sum += mid;
    i = j;
  }
  for (int l : labels) {
    if (l == 1) ++n_pos;
    else if (l == 0) ++n_neg;
    else throw std::invalid_argument("auc: labels must be 0 or 1");
  }
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc: both classes must be present");
  const double u = pos_rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double macro_auc(std::span<const double> scores, std::span<const int> labels, ScoreKind kind) {
  std::vector<double> neg_scores(scores.size());
  std::vector<int> neg_labels(labels.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    neg_scores[i] = kind == ScoreKind::Probability ? 1.0 - scores[i] : -scores[i];
  for (std::size_t i = 0; i < labels.size(); ++i) neg_labels[i] = labels[i] == 0 ? 1 : 0;
  const double auc1 = binary_auc(scores, labels);
  const double auc0 = binary_auc(neg_scores, neg_labels);
  return 0.5 * (auc1 + auc0);
}

EvalSet EvalSet::subset(std::span<const std::size_t> idx) const {
  EvalSet out;
  out.kind = kind;
  out.predictions.reserve(idx.size());
  out.scores.reserve(idx.size());
  out.labels.reserve(idx.size());
  for (std::size_t i : idx) {
    out.predictions.push_back(predictions.at(i));
    out.scores.push_back(scores.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

void BootstrapConfig::validate() const {
  if (n_replicates < 2) throw std::invalid_argument("bootstrap: n_replicates must be >= 2");
  if (!(ci_level > 0.0 && ci_level < 1.0))
    throw std::invalid_argument("bootstrap: ci_level must lie in (0, 1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("bootstrap: alpha must lie in (0, 1)");
}

std::vector<std::size_t> bootstrap_indices(std::span<const int> labels, std::uint64_t seed,
                                           int replicate) {
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i] == 1 ? 1 : 0].push_back(i);
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(replicate)));
  std::vector<std::size_t> idx;
  idx.reserve(labels.size());
  for (const auto& members : by_class)
    for (std::size_t k = 0; k < members.size(); ++k) idx.push_back(members[rng.index(members.size())]);
  return idx;
}

BootstrapResult bootstrap_ci(const MetricFn& metric, const EvalSet& data, const BootstrapConfig& cfg) {
  cfg.validate();
  if (data.labels.size() < 2) throw std::invalid_argument("bootstrap: need at least 2 samples");
  BootstrapResult r;
  r.point = metric(data);
  r.replicates.reserve(static_cast<std::size_t>(cfg.n_replicates));
  for (int i = 0; i < cfg.n_replicates; ++i) {
    const auto idx = bootstrap_indices(data.labels, cfg.seed, i);
    r.replicates.push_back(metric(data.subset(idx)));
  }
  const double tail = 0.5 * (1.0 - cfg.ci_level);
  r.ci_low = quantile(std::span<const double>(r.replicates), tail);
  r.ci_high = quantile(std::span<const double>(r.replicates), 1.0 - tail);
  return r;
}

// ---------------------------------------------------------------------------
// Wilcoxon

namespace {

struct SignedRanks {
  std::vector<double> ranks;  // mid-ranks of |d|
  std::vector<bool> positive;
  std::vector<long> tie_sizes;
};

SignedRanks signed_ranks(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
  if (d.empty()) throw std::invalid_argument("wilcoxon: degenerate comparison (all differences zero)");
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
  SignedRanks s;
  s.ranks.assign(d.size(), 0.0);
  s.positive.assign(d.size(), false);
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && std::abs(d[order[j]]) == std::abs(d[order[i]])) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) s.ranks[order[k]] = mid;
    if (j - i > 1) s.tie_sizes.push_back(static_cast<long>(j - i));
    i = j;
  }
  for (std::size_t i = 0; i < d.size(); ++i) s.positive[i] = d[i] > 0.0;
  return s;
}

double normal_p(const SignedRanks& s, double w_plus) {
  const double n = static_cast<double>(s.ranks.size());
  const double mean = n * (n + 1.0) / 4.0;
  double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
  for (long t : s.tie_sizes) var -= static_cast<double>(t * t * t - t) / 48.0;
  if (var <= 0.0) return 1.0;
  const double z = std::max(0.0, (std::abs(w_plus - mean) - 0.5) / std::sqrt(var));
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  const SignedRanks s = signed_ranks(a, b);
  WilcoxonResult r;
  r.n = static_cast<int>(s.ranks.size());
  if (r.n < 5)
    throw std::invalid_argument("wilcoxon: need at least 5 non-zero differences, got " +
                                std::to_string(r.n));
  for (std::size_t i = 0; i < s.ranks.size(); ++i) (s.positive[i] ? r.w_plus : r.w_minus) += s.ranks[i];
  r.w = std::min(r.w_plus, r.w_minus);

  if (r.n > 25) {
    r.p_value = normal_p(s, r.w_plus);
    return r;
  }
  // Mid-ranks are multiples of 1/2, so doubled ranks are integers and the
  // distribution of 2*W+ over all sign assignments is a subset-sum count.
  std::vector<long> doubled;
  long total = 0;
  for (double rk : s.ranks) {
    doubled.push_back(std::lround(2.0 * rk));
    total += doubled.back();
  }
  std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
  count[0] = 1.0;
  long reach = 0;
  for (long x : doubled) {
    for (long t = reach; t >= 0; --t)
      if (count[static_cast<std::size_t>(t)] != 0.0) count[static_cast<std::size_t>(t + x)] += count[static_cast<std::size_t>(t)];
    reach += x;
  }
  const long w2 = std::lround(2.0 * r.w);
  double extreme = 0.0;
  for (long t = 0; t <= total; ++t)
    if (std::min(t, total - t) <= w2) extreme += count[static_cast<std::size_t>(t)];
  r.p_value = std::min(1.0, extreme / std::ldexp(1.0, r.n));
  r.exact = true;
  return r;
}

double wilcoxon_normal_p(std::span<const double> a, std::span<const double> b) {
  const SignedRanks s = signed_ranks(a, b);
  double w_plus = 0.0;
  for (std::size_t i = 0; i < s.ranks.size(); ++i)
    if (s.positive[i]) w_plus += s.ranks[i];
  return normal_p(s, w_plus);
}

// ---------------------------------------------------------------------------
// Reports

EvalReport evaluate_model(const std::string& name, const EvalSet& data, const BootstrapConfig& cfg) {
  cfg.validate();
  if (data.labels.size() != data.scores.size() || data.labels.size() != data.predictions.size())
    throw std::invalid_argument("evaluate: predictions, scores and labels differ in length");
  EvalReport r;
  r.name = name;
  r.n_samples = static_cast<int>(data.labels.size());
  r.n_positive = static_cast<int>(std::count(data.labels.begin(), data.labels.end(), 1));
  if (r.n_positive == 0 || r.n_positive == r.n_samples)
    throw std::invalid_argument("evaluate: both classes must be present in " + name);
  r.confusion = binary_metrics(data.predictions, data.labels);

  auto confusion_metric = [](double BinaryMetrics::*field) {
    return [field](const EvalSet& e) { return binary_metrics(e.predictions, e.labels).*field; };
  };
  const std::map<std::string, MetricFn> fns{
      {"accuracy", confusion_metric(&BinaryMetrics::accuracy)},
      {"precision", confusion_metric(&BinaryMetrics::precision)},
      {"recall", confusion_metric(&BinaryMetrics::recall)},
      {"f1", confusion_metric(&BinaryMetrics::f1)},
      {"specificity", confusion_metric(&BinaryMetrics::specificity)},
      {"macro_auc", [](const EvalSet& e) { return macro_auc(e.scores, e.labels, e.kind); }}};
  for (const auto& [metric, fn] : fns) r.metrics[metric] = bootstrap_ci(fn, data, cfg);
  return r;
}

Comparison compare_models(const EvalReport& a, const EvalReport& b, const BootstrapConfig& cfg) {
  const auto& ra = a.metrics.at("macro_auc").replicates;
  const auto& rb = b.metrics.at("macro_auc").replicates;
  if (ra.size() != rb.size())
    throw std::invalid_argument("compare_models: replicate counts differ (" +
                                std::to_string(ra.size()) + " vs " + std::to_string(rb.size()) + ")");
  Comparison c;
  c.a = a.name;
  c.b = b.name;
  c.test = wilcoxon_signed_rank(ra, rb);
  c.significant = c.test.p_value < cfg.alpha;
  return c;
}

json to_json(const EvalReport& r) {
  json metrics = json::object();
  for (const auto& [name, m] : r.metrics)
    metrics[name] = {{"point", m.point},
                     {"ci_low", m.ci_low},
                     {"ci_high", m.ci_high},
                     {"replicates", m.replicates}};
  const auto& c = r.confusion;
  return json{{"name", r.name},
              {"n_samples", r.n_samples},
              {"n_positive", r.n_positive},
              {"ci_method", "percentile"},
              {"metrics", metrics},
              {"confusion",
               {{"tp", c.tp},
                {"fp", c.fp},
                {"tn", c.tn},
                {"fn", c.fn},
                {"undefined_precision", c.undefined_precision},
                {"undefined_recall", c.undefined_recall},
                {"undefined_specificity", c.undefined_specificity}}}};
}

json to_json(const Comparison& c) {
  return json{{"a", c.a},
              {"b", c.b},
              {"metric", c.metric},
              {"test", "wilcoxon_signed_rank"},
              {"w", c.test.w},
              {"w_plus", c.test.w_plus},
              {"w_minus", c.test.w_minus},
              {"n", c.test.n},
              {"exact", c.test.exact},
              {"p_value", c.test.p_value},
              {"significant", c.significant}};
}

EvalReport eval_report_from_json(const json& j) {
  EvalReport r;
  r.name = j.at("name").get<std::string>();
  r.n_samples = j.at("n_samples").get<int>();
  r.n_positive = j.at("n_positive").get<int>();
  for (const auto& [name, m] : j.at("metrics").items()) {
    BootstrapResult b;
    b.point = m.at("point").get<double>();
    b.ci_low = m.at("ci_low").get<double>();
    b.ci_high = m.at("ci_high").get<double>();
    b.replicates = m.at("replicates").get<std::vector<double>>();
    r.metrics[name] = std::move(b);
  }
  if (j.contains("confusion")) {
    const auto& c = j.at("confusion");
    r.confusion.tp = c.at("tp").get<long>();
    r.confusion.fp = c.at("fp").get<long>();
    r.confusion.tn = c.at("tn").get<long>();
    r.confusion.fn = c.at("fn").get<long>();
  }
  return r;
}

std::string bootstrap_svg(const std::vector<EvalReport>& reports) {
  const double width = 120.0 + 110.0 * static_cast<double>(reports.size());
  const double height = 360.0, top = 30.0, bottom = 300.0;
  double lo = 1.0, hi = 0.0;
  for (const auto& r : reports) {
    const auto& m = r.metrics.at("macro_auc");
    for (double v : m.replicates) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    lo = std::min(lo, m.point);
    hi = std::max(hi, m.point);
  }
  lo = std::max(0.0, std::floor(lo * 20.0) / 20.0 - 0.05);
  hi = std::min(1.0, std::ceil(hi * 20.0) / 20.0 + 0.05);
  if (hi <= lo) hi = lo + 0.1;
  auto y = [&](double v) { return bottom - (v - lo) / (hi - lo) * (bottom - top); };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<line x1=\"60\" y1=\"" << top << "\" x2=\"60\" y2=\"" << bottom << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    os << "<text x=\"55\" y=\"" << y(v) + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
  os << "<text x=\"15\" y=\"" << 0.5 * (top + bottom)
     << "\" transform=\"rotate(-90 15 " << 0.5 * (top + bottom)
     << ")\" text-anchor=\"middle\">bootstrapped macro-AUC</text>\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& m = reports[i].metrics.at("macro_auc");
    std::vector<double> s = m.replicates;
    std::sort(s.begin(), s.end());
    const std::span<const double> sv(s);
    const double q1 = quantile_sorted(sv, 0.25), med = quantile_sorted(sv, 0.5),
                 q3 = quantile_sorted(sv, 0.75);
    const double cx = 110.0 + 110.0 * static_cast<double>(i);
    os << "<line x1=\"" << cx << "\" y1=\"" << y(m.ci_low) << "\" x2=\"" << cx << "\" y2=\""
       << y(m.ci_high) << "\" stroke=\"black\"/>\n";
    for (double v : {m.ci_low, m.ci_high})
      os << "<line x1=\"" << cx - 12 << "\" y1=\"" << y(v) << "\" x2=\"" << cx + 12 << "\" y2=\""
         << y(v) << "\" stroke=\"black\"/>\n";
    os << "<rect x=\"" << cx - 25 << "\" y=\"" << y(q3) << "\" width=\"50\" height=\""
       << std::max(0.5, y(q1) - y(q3)) << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << cx - 25 << "\" y1=\"" << y(med) << "\" x2=\"" << cx + 25 << "\" y2=\""
       << y(med) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    os << "<circle cx=\"" << cx << "\" cy=\"" << y(m.point) << "\" r=\"3\" fill=\"#d62728\"/>\n";
    os << "<text x=\"" << cx << "\" y=\"" << bottom + 18 << "\" text-anchor=\"middle\">"
       << reports[i].name << "</text>\n";
    os << "<text x=\"" << cx << "\" y=\"" << bottom + 32 << "\" text-anchor=\"middle\">"
       << std::setprecision(3) << m.point << " [" << m.ci_low << ", " << m.ci_high << "]"
       << std::setprecision(2) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace mvood
