#include <epirefine/matcher/matcher.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace epirefine::matcher {

using diffcore::Tensor;

std::string to_string(FilterPolicy p) {
  switch (p) {
    case FilterPolicy::kNoFiltering: return "NoFiltering";
    case FilterPolicy::kFixedAtInit: return "FixedAtInit";
    case FilterPolicy::kAdaptive: return "Adaptive";
  }
  throw Error("unknown FilterPolicy");
}

FilterPolicy policy_from_string(const std::string& s) {
  if (s == "NoFiltering") return FilterPolicy::kNoFiltering;
  if (s == "FixedAtInit") return FilterPolicy::kFixedAtInit;
  if (s == "Adaptive") return FilterPolicy::kAdaptive;
  throw Error("unknown filter policy: " + s);
}

std::string MatchSet::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "qx,qy,mx,my,confidence\n";
  for (const auto& m : matches)
    out << m.x.x() << ',' << m.x.y() << ',' << m.y.x() << ',' << m.y.y() << ','
        << m.confidence << '\n';
  return out.str();
}

MatchSet MatchSet::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("qx,qy,mx,my,confidence", 0) != 0)
    throw IoError("matches CSV: bad header");
  MatchSet set;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    Match m;
    char comma;
    if (!(row >> m.x.x() >> comma >> m.x.y() >> comma >> m.y.x() >> comma >> m.y.y() >>
          comma >> m.confidence))
      throw IoError("matches CSV: bad row: " + line);
    set.matches.push_back(m);
  }
  return set;
}

FeatureMap extract_features(diffcore::Tape& tape, const Tensor& image, int patch_size) {
  using namespace diffcore;
  const auto& shape = image.shape();
  if (shape.size() != 2 && !(shape.size() == 3 && shape[2] == 3))
    throw ShapeError("extract_features: image must be {H,W} or {H,W,3}");
  const auto h = shape[0], w = shape[1];

  Tensor gray;
  if (shape.size() == 3) {
    Tensor flat = reshape(image, {h * w, 3});
    Tensor weights = tape.constant({3, 1}, {0.299, 0.587, 0.114});
    gray = reshape(matmul(flat, weights), {h, w});
  } else {
    gray = image;
  }

  const int p = patch_size;
  if (p < 1 || p % 2 == 0) throw Error("extract_features: patch size must be odd");
  Tensor raw = patches(gray, p);                                   // {HW, p*p}
  Tensor mean = scalar_mul(sum_axis(raw, 1), 1.0 / (p * p));       // {HW, 1}
  Tensor centered = sub(raw, mean);
  Tensor ssq = sum_axis(mul(centered, centered), 1);               // {HW, 1}
  Tensor norm = sqrt_(scalar_add(ssq, 1e-20));
  FeatureMap fm;
  fm.desc = div(centered, norm);
  fm.matchable.resize(static_cast<std::size_t>(h * w));
  const auto& ssq_v = ssq.values();
  for (std::size_t i = 0; i < ssq_v.size(); ++i) fm.matchable[i] = ssq_v[i] > 1e-12;
  fm.height = static_cast<int>(h);
  fm.width = static_cast<int>(w);
  fm.patch_size = p;
  return fm;
}

Tensor soft_argmax_rows(diffcore::Tape& tape, const Tensor& scores, int width,
                        double temperature, int window_radius,
                        std::vector<double>* confidences,
                        const std::vector<std::int64_t>* centers_in,
                        std::vector<std::int64_t>* centers_out) {
  using namespace diffcore;
  if (scores.shape().size() != 2) throw ShapeError("soft_argmax_rows: scores must be 2-D");
  if (window_radius < 0) throw Error("soft_argmax_rows: negative window radius");
  const auto q = scores.rows(), n = scores.cols();
  if (n % width != 0) throw ShapeError("soft_argmax_rows: cols not divisible by width");
  const auto w = static_cast<std::int64_t>(width);
  const auto h = n / w;
  const auto rx = std::min<std::int64_t>(window_radius, (w - 1) / 2);
  const auto ry = std::min<std::int64_t>(window_radius, (h - 1) / 2);
  const auto wx = 2 * rx + 1, wy = 2 * ry + 1, win = wx * wy;

  const auto& sv = scores.values();
  std::vector<std::int64_t> cell_rows(static_cast<std::size_t>(q * win));
  std::vector<double> px(static_cast<std::size_t>(q) * win), py(px.size());
  std::vector<std::int64_t> ctr_x(static_cast<std::size_t>(q)), ctr_y(ctr_x.size());
  if (centers_in && static_cast<std::int64_t>(centers_in->size()) != q)
    throw ShapeError("soft_argmax_rows: centers_in size mismatch");
  for (std::int64_t r = 0; r < q; ++r) {
    const double* row = sv.data() + r * n;
    const auto peak = centers_in
        ? (*centers_in)[static_cast<std::size_t>(r)]
        : static_cast<std::int64_t>(std::max_element(row, row + n) - row);
    if (peak < 0 || peak >= n) throw Error("soft_argmax_rows: center out of range");
    const auto cx = std::clamp(peak % w, rx, w - 1 - rx);
    const auto cy = std::clamp(peak / w, ry, h - 1 - ry);
    ctr_x[static_cast<std::size_t>(r)] = cx;
    ctr_y[static_cast<std::size_t>(r)] = cy;
    std::int64_t k = 0;
    for (std::int64_t dy = -ry; dy <= ry; ++dy)
      for (std::int64_t dx = -rx; dx <= rx; ++dx, ++k) {
        const auto u = (cy + dy) * w + (cx + dx);
        cell_rows[static_cast<std::size_t>(r * win + k)] = r * n + u;
        px[static_cast<std::size_t>(r * win + k)] = static_cast<double>(cx + dx);
        py[static_cast<std::size_t>(r * win + k)] = static_cast<double>(cy + dy);
      }
  }

  Tensor flat = reshape(scores, {q * n, 1});
  Tensor window = reshape(gather_rows(flat, cell_rows), {q, win});
  Tensor probs = softmax_rows(scalar_mul(window, 1.0 / temperature));
  Tensor pos_x = tape.constant({q, win}, std::move(px));
  Tensor pos_y = tape.constant({q, win}, std::move(py));
  Tensor y = concat_cols(sum_axis(mul(probs, pos_x), 1), sum_axis(mul(probs, pos_y), 1));

  if (centers_out) {
    centers_out->resize(static_cast<std::size_t>(q));
    for (std::int64_t r = 0; r < q; ++r)
      (*centers_out)[static_cast<std::size_t>(r)] =
          ctr_y[static_cast<std::size_t>(r)] * w + ctr_x[static_cast<std::size_t>(r)];
  }

  if (confidences) {
    // Confidence from the contrast between the selected peak and the best
    // competitor outside its window: 1 - exp(-(s1 - s2) / temperature),
    // in [0,1]. Unlike full-image softmax mass this does not dilute as the
    // image area grows. Plain values, not taped.
    confidences->assign(static_cast<std::size_t>(q), 0.0);
    const auto& sv2 = scores.values();  // re-fetch: ops above may grow the tape
    for (std::int64_t r = 0; r < q; ++r) {
      const double* row = sv2.data() + r * n;
      const auto cx = ctr_x[static_cast<std::size_t>(r)];
      const auto cy = ctr_y[static_cast<std::size_t>(r)];
      double s1 = -std::numeric_limits<double>::infinity(), s2 = s1;
      for (std::int64_t u = 0; u < n; ++u) {
        const bool inside = std::abs(u % w - cx) <= rx && std::abs(u / w - cy) <= ry;
        (inside ? s1 : s2) = std::max(inside ? s1 : s2, row[u]);
      }
      (*confidences)[static_cast<std::size_t>(r)] =
          std::isfinite(s2) ? 1.0 - std::exp(-(s1 - s2) / temperature) : 1.0;
    }
  }
  return y;
}

DenseMatches match_dense(diffcore::Tape& tape, const FeatureMap& feat_ref,
                         const FeatureMap& feat_gen, const MatcherConfig& cfg,
                         const std::vector<std::int64_t>* window_centers) {
  using namespace diffcore;
  if (feat_ref.desc.cols() != feat_gen.desc.cols())
    throw ShapeError("match_dense: descriptor dimensions differ");

  std::vector<std::int64_t> query_rows;
  std::vector<Vec2> queries;
  const int off = cfg.stride / 2;
  for (int y = off; y < feat_ref.height; y += cfg.stride)
    for (int x = off; x < feat_ref.width; x += cfg.stride) {
      const auto idx = static_cast<std::int64_t>(y) * feat_ref.width + x;
      if (!feat_ref.matchable[static_cast<std::size_t>(idx)]) continue;
      query_rows.push_back(idx);
      queries.emplace_back(x, y);
    }
  if (query_rows.empty()) throw InsufficientMatches("match_dense: no matchable queries");

  Tensor q_desc = gather_rows(feat_ref.desc, query_rows);        // {Q, d}
  Tensor scores = matmul(q_desc, transpose(feat_gen.desc));      // {Q, HW}

  DenseMatches dm;
  dm.y = soft_argmax_rows(tape, scores, feat_gen.width, cfg.temperature, cfg.window_radius,
                          &dm.confidences, window_centers, &dm.window_centers);
  dm.queries = std::move(queries);
  dm.gen_width = feat_gen.width;
  dm.gen_height = feat_gen.height;

  if (cfg.cycle_tolerance_px >= 0) {
    // Forward-backward gate: re-match each selected generated pixel back to
    // the reference and zero the confidence when the round trip does not
    // land near the query. Plain-value pass, no tape involvement.
    const auto d = feat_ref.desc.cols();
    const auto n_ref = static_cast<std::int64_t>(feat_ref.matchable.size());
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        ref_d(feat_ref.desc.values().data(), n_ref, d);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        gen_d(feat_gen.desc.values().data(),
              static_cast<std::int64_t>(feat_gen.matchable.size()), d);
    const auto& yv = dm.y.values();
    const double tol2 = cfg.cycle_tolerance_px * cfg.cycle_tolerance_px;
    for (std::size_t i = 0; i < dm.queries.size(); ++i) {
      const auto gx = std::clamp(static_cast<std::int64_t>(std::llround(yv[2 * i])),
                                 std::int64_t{0}, static_cast<std::int64_t>(feat_gen.width - 1));
      const auto gy = std::clamp(static_cast<std::int64_t>(std::llround(yv[2 * i + 1])),
                                 std::int64_t{0}, static_cast<std::int64_t>(feat_gen.height - 1));
      const Eigen::VectorXd back = ref_d * gen_d.row(gy * feat_gen.width + gx).transpose();
      std::int64_t best = 0;
      back.maxCoeff(&best);
      const double bx = static_cast<double>(best % feat_ref.width);
      const double by = static_cast<double>(best / feat_ref.width);
      const double dx = bx - dm.queries[i].x(), dy = by - dm.queries[i].y();
      if (dx * dx + dy * dy > tol2) dm.confidences[i] = 0.0;
    }
  }
  return dm;
}

MatchSet DenseMatches::to_match_set() const {
  std::vector<std::int64_t> all(queries.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int64_t>(i);
  return to_match_set(all);
}

MatchSet DenseMatches::to_match_set(const std::vector<std::int64_t>& keep) const {
  const auto& yv = y.values();
  MatchSet set;
  set.matches.reserve(keep.size());
  for (const auto i : keep) {
    const auto u = static_cast<std::size_t>(i);
    set.matches.push_back({queries[u],
                           Vec2(yv[2 * u], yv[2 * u + 1]),
                           confidences[u]});
  }
  return set;
}

std::vector<std::int64_t> MatchFilter::select(const DenseMatches& m) {
  std::vector<std::int64_t> keep;
  switch (policy_) {
    case FilterPolicy::kNoFiltering:
      keep.resize(m.queries.size());
      for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = static_cast<std::int64_t>(i);
      break;
    case FilterPolicy::kFixedAtInit:
      if (!initialized_) {
        for (std::size_t i = 0; i < m.confidences.size(); ++i)
          if (m.confidences[i] >= tau_) frozen_.push_back(static_cast<std::int64_t>(i));
        initialized_ = true;
      }
      keep = frozen_;
      break;
    case FilterPolicy::kAdaptive:
      for (std::size_t i = 0; i < m.confidences.size(); ++i)
        if (m.confidences[i] >= tau_) keep.push_back(static_cast<std::int64_t>(i));
      break;
  }
  if (keep.size() < 8)
    throw InsufficientMatches("filter kept " + std::to_string(keep.size()) +
                              " matches, need at least 8");
  return keep;
}

}  // namespace epirefine::matcher
