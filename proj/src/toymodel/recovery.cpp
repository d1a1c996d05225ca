#include "toymodel/recovery.hpp"

#include <algorithm>

#include "common/error.hpp"

namespace xcod::toymodel {

namespace {

const char* kind_name(PlantedKind k) {
  switch (k) {
    case PlantedKind::kShared: return "shared";
    case PlantedKind::kUniqueBase: return "unique_base";
    case PlantedKind::kUniqueDistilled: return "unique_distilled";
  }
  return "?";
}

bool in_band(PlantedKind k, double nrn) {
  switch (k) {
    case PlantedKind::kShared: return nrn >= 0.35 && nrn <= 0.65;
    case PlantedKind::kUniqueBase: return nrn < 0.3;
    case PlantedKind::kUniqueDistilled: return nrn > 0.7;
  }
  return false;
}

nlohmann::json to_json(const KindSummary& s) {
  return {{"planted", s.planted}, {"recovered", s.recovered}, {"in_band", s.in_band}, {"band_fraction", s.band_fraction()}};
}

}  // namespace

double RecoveryReport::recovered_fraction() const {
  const Index total = shared.planted + unique_base.planted + unique_distilled.planted;
  return total > 0 ? static_cast<double>(recovered()) / static_cast<double>(total) : 0.0;
}

RecoveryReport planted_recovery(const PlantedWorld& world, const coder::CrosscoderParams& params, const Vector& nrn,
                                double threshold) {
  require(params.n_sides() == 2, ErrorCode::kInvalidArgument, "planted recovery needs a two-sided crosscoder");
  require(params.shape.dims[0] == world.dim(Side::kBase) && params.shape.dims[1] == world.dim(Side::kDistilled),
          ErrorCode::kShapeMismatch, "crosscoder and world dimensions differ");
  require(nrn.size() == params.n_features(), ErrorCode::kShapeMismatch, "one nrn per feature expected");

  std::vector<Index> ids_a, ids_b;
  const MmcsResult ma = mmcs(world.side_dictionary(Side::kBase, &ids_a), params.decoder[0]);
  const MmcsResult mb = mmcs(world.side_dictionary(Side::kDistilled, &ids_b), params.decoder[1]);
  RecoveryReport report;
  report.mmcs_base = ma.mean;
  report.mmcs_distilled = mb.mean;
  auto lookup = [](const std::vector<Index>& ids, const MmcsResult& m, Index feature) -> std::pair<double, Index> {
    const auto it = std::find(ids.begin(), ids.end(), feature);
    if (it == ids.end()) return {0.0, -1};
    const auto i = static_cast<std::size_t>(it - ids.begin());
    return {m.max_cosine[i], m.best_match[i]};
  };

  for (Index f = 0; f < world.config.n_planted(); ++f) {
    RecoveredFeature r;
    r.planted = f;
    r.kind = world.kind(f);
    const auto [ca, la] = lookup(ids_a, ma, f);
    const auto [cb, lb] = lookup(ids_b, mb, f);
    switch (r.kind) {
      case PlantedKind::kShared:
        r.cosine = std::min(ca, cb);
        r.latent = la;
        break;
      case PlantedKind::kUniqueBase:
        r.cosine = ca;
        r.latent = la;
        break;
      case PlantedKind::kUniqueDistilled:
        r.cosine = cb;
        r.latent = lb;
        break;
    }
    r.recovered = r.cosine >= threshold && r.latent >= 0;
    KindSummary& s = r.kind == PlantedKind::kShared       ? report.shared
                     : r.kind == PlantedKind::kUniqueBase ? report.unique_base
                                                          : report.unique_distilled;
    ++s.planted;
    if (r.recovered) {
      r.nrn = nrn(r.latent);
      ++s.recovered;
      if (in_band(r.kind, r.nrn)) ++s.in_band;
    }
    report.features.push_back(r);
  }
  return report;
}

nlohmann::json to_json(const RecoveryReport& report) {
  auto feats = nlohmann::json::array();
  for (const auto& f : report.features)
    feats.push_back({{"planted", f.planted}, {"kind", kind_name(f.kind)}, {"recovered", f.recovered},
                     {"latent", f.latent}, {"cosine", f.cosine}, {"nrn", f.nrn}});
  return {{"recovered", report.recovered()},
          {"recovered_fraction", report.recovered_fraction()},
          {"mmcs_base", report.mmcs_base},
          {"mmcs_distilled", report.mmcs_distilled},
          {"shared", to_json(report.shared)},
          {"unique_base", to_json(report.unique_base)},
          {"unique_distilled", to_json(report.unique_distilled)},
          {"features", feats}};
}

}  // namespace xcod::toymodel
