#pragma once

#include <vector>

#include <json.hpp>

#include "coder/coder.hpp"
#include "toymodel/world.hpp"

namespace xcod::toymodel {

struct RecoveredFeature {
  Index planted = 0;   // planted feature id
  PlantedKind kind = PlantedKind::kShared;
  bool recovered = false;
  Index latent = -1;   // best-matching learned feature
  double cosine = 0.0; // min over the sides the planted feature lives on
  double nrn = 0.0;    // nrn of that latent, when recovered
};

struct KindSummary {
  Index planted = 0;
  Index recovered = 0;
  Index in_band = 0;  // recovered features whose nrn lies in the kind's band
  double band_fraction() const { return recovered > 0 ? static_cast<double>(in_band) / recovered : 0.0; }
};

struct RecoveryReport {
  std::vector<RecoveredFeature> features;
  KindSummary shared, unique_base, unique_distilled;
  double mmcs_base = 0.0;
  double mmcs_distilled = 0.0;

  Index recovered() const { return shared.recovered + unique_base.recovered + unique_distilled.recovered; }
  double recovered_fraction() const;
};

// A planted feature is recovered when the learned decoder matches it with
// |cosine| >= threshold on every side it lives on. Shared features take the
// base-side match as their latent. Bands: unique-base nrn < 0.3, shared
// nrn in [0.35, 0.65], unique-distilled nrn > 0.7.
RecoveryReport planted_recovery(const PlantedWorld& world, const coder::CrosscoderParams& params, const Vector& nrn,
                                double threshold = 0.9);

nlohmann::json to_json(const RecoveryReport& report);

}  // namespace xcod::toymodel
