#include <epirefine/refine/refine.hpp>

#include <json.hpp>

#include <cmath>
#include <limits>

#include <epirefine/scene/render.hpp>

namespace epirefine::refine {

using diffcore::Tape;
using diffcore::Tensor;
using epigeo::Vec2;
using nlohmann::ordered_json;

void RefinementConfig::validate() const {
  if (iterations < 0) throw Error("RefinementConfig: negative iteration count");
  if (!(learning_rate > 0)) throw Error("RefinementConfig: learning rate must be positive");
  if (!(huber_delta_px > 0)) throw Error("RefinementConfig: huber delta must be positive");
  if (lambda_rgb < 0) throw Error("RefinementConfig: negative lambda_rgb");
  if (!(tau_conf >= 0)) throw Error("RefinementConfig: negative confidence threshold");
  if (epipole_radius_px < 0) throw Error("RefinementConfig: negative epipole radius");
}

std::string RefinementTrace::to_json() const {
  ordered_json j;
  j["iterations"] = ordered_json::array();
  for (const auto& it : iterations) {
    ordered_json ji;
    ji["loss"] = it.loss;
    ji["epi_term"] = it.epi_term;
    ji["rgb_term"] = it.rgb_term;
    ji["match_count"] = it.match_count;
    ji["skipped"] = it.skipped;
    j["iterations"].push_back(ji);
  }
  j["final_latent"] = final_latent;
  j["best_latent"] = best_latent;
  j["best_index"] = best_index;
  return j.dump(2);
}

namespace {

Image image_from_tensor(const Tensor& t) {
  const auto& sh = t.shape();
  const int c = sh.size() == 3 ? static_cast<int>(sh[2]) : 1;
  Image img(static_cast<int>(sh[0]), static_cast<int>(sh[1]), c);
  img.data = t.values();
  return img;
}

}  // namespace

RefineResult refine(const sampler::GeneratorContract& generator, const Image& img_ref,
                    const epigeo::FundamentalMatrix& f, const RefinementConfig& cfg,
                    std::uint64_t seed, const std::optional<std::vector<double>>& initial_latent) {
  cfg.validate();
  if (img_ref.height != generator.height() || img_ref.width != generator.width())
    throw ShapeError("refine: reference image resolution differs from the generator's");

  const auto lshape = generator.latent_shape();
  const auto lsize = static_cast<std::size_t>(diffcore::numel(lshape));
  std::vector<double> zv;
  if (initial_latent) {
    if (initial_latent->size() != lsize) throw ShapeError("refine: initial latent size");
    zv = *initial_latent;
  } else {
    zv = sampler::standard_normal(seed, lsize);
  }

  matcher::MatchFilter filter(cfg.policy, cfg.tau_conf);
  AdamState adam = AdamState::zeros(lsize);
  RefinementTrace trace;
  trace.iterations.reserve(static_cast<std::size_t>(cfg.iterations) + 1);
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<double> best_latent = zv;

  for (int it = 0; it <= cfg.iterations; ++it) {
    Tape tape;
    Tensor z = tape.leaf(lshape, zv, true);
    Tensor img = generator.generate(tape, z);

    IterationRecord rec;
    bool have_loss = false;
    Tensor loss;
    try {
      auto feat_ref = matcher::extract_features(tape, scene::image_constant(tape, img_ref),
                                                cfg.matcher_cfg.patch_size);
      auto feat_gen = matcher::extract_features(tape, img, cfg.matcher_cfg.patch_size);
      auto dm = matcher::match_dense(tape, feat_ref, feat_gen, cfg.matcher_cfg);
      const auto keep = filter.select(dm);
      std::vector<Vec2> xs;
      xs.reserve(keep.size());
      for (const auto i : keep) xs.push_back(dm.queries[static_cast<std::size_t>(i)]);
      Tensor yk = diffcore::gather_rows(dm.y, keep);
      auto terms = consistency_loss(tape, xs, yk, f, img_ref, img, cfg);
      rec.loss = terms.total.value();
      rec.epi_term = terms.epi_value;
      rec.rgb_term = terms.rgb_value;
      rec.match_count = terms.used;
      loss = terms.total;
      have_loss = std::isfinite(rec.loss);
      rec.skipped = !have_loss;
    } catch (const InsufficientMatches&) {
      if (it == 0) throw;  // nothing to optimize from; caller may reseed
      rec.skipped = true;
    }
    trace.iterations.push_back(rec);

    if (have_loss && rec.loss < best_loss) {
      best_loss = rec.loss;
      best_latent = zv;
      trace.best_index = it;
    }
    if (it == cfg.iterations) break;
    if (!have_loss) continue;

    tape.backward(loss);
    if (!adam_update(zv, z.grad(), adam, cfg.learning_rate))
      trace.iterations.back().skipped = true;
  }

  trace.final_latent = zv;
  trace.best_latent = best_latent;

  Tape tape;
  Tensor z = tape.leaf(lshape, best_latent, false);
  RefineResult out;
  out.image = image_from_tensor(generator.generate(tape, z));
  out.trace = std::move(trace);
  return out;
}

}  // namespace epirefine::refine
