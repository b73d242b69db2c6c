// SPDX-License-Identifier: Apache-2.0

#include "evae/config.hpp"

#include <set>

#include "evae/errors.hpp"
#include "evae/model.hpp"

namespace evae {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::vae: return "vae";
    case Variant::dropout_vae: return "dropout_vae";
    case Variant::evae: return "evae";
    case Variant::mvae: return "mvae";
  }
  return "?";
}

std::string to_string(DecoderFamily f) { return f == DecoderFamily::bernoulli ? "bernoulli" : "gaussian"; }

Variant parse_variant(const std::string& s) {
  if (s == "vae") return Variant::vae;
  if (s == "dropout_vae") return Variant::dropout_vae;
  if (s == "evae") return Variant::evae;
  if (s == "mvae") return Variant::mvae;
  throw ConfigError("unknown model variant '" + s + "'");
}

DecoderFamily parse_decoder_family(const std::string& s) {
  if (s == "bernoulli") return DecoderFamily::bernoulli;
  if (s == "gaussian") return DecoderFamily::gaussian;
  throw ConfigError("unknown decoder family '" + s + "'");
}

ModelConfig ModelConfig::resolved() const {
  ModelConfig c = *this;
  if (!has_epitomes()) {
    if ((c.epitome_size != 0 && c.epitome_size != c.latent_dim) ||
        (c.epitome_stride != 0 && c.epitome_stride != c.latent_dim)) {
      throw ConfigError(to_string(variant) + " requires epitome_size = epitome_stride = latent_dim");
    }
    c.epitome_size = c.latent_dim;
    c.epitome_stride = c.latent_dim;
  } else {
    if (c.epitome_size == 0) c.epitome_size = c.latent_dim;
    if (c.epitome_stride == 0) c.epitome_stride = c.epitome_size;
  }
  c.validate();
  if (c.variant == Variant::mvae && c.mvae_hidden == 0) {
    c.mvae_hidden = mvae_hidden_size(c.hidden, c.depth, c.obs_dim, c.latent_dim, c.epitome_size, c.num_epitomes(),
                                     c.decoder);
  }
  return c;
}

void ModelConfig::validate() const {
  if (obs_dim < 1) throw ConfigError("obs_dim must be >= 1");
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (depth < 1) throw ConfigError("depth must be >= 1");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (!(kl_weight >= 0.0)) throw ConfigError("kl_weight must be >= 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
  if (!(logvar_clamp > 0.0)) throw ConfigError("logvar_clamp must be > 0");
  if (variant != Variant::dropout_vae && dropout_rate != 0.0) {
    throw ConfigError("dropout_rate is only meaningful for dropout_vae");
  }
  if (mvae_hidden < 0) throw ConfigError("mvae_hidden must be >= 0");
  // Throws on bad (D, K, s).
  build_epitome_masks(latent_dim, epitome_size, epitome_stride);
}

int ModelConfig::num_epitomes() const {
  const int K = epitome_size == 0 ? latent_dim : epitome_size;
  const int s = epitome_stride == 0 ? K : epitome_stride;
  return (latent_dim - K) / s + 1;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"obs_dim", c.obs_dim},
                     {"latent_dim", c.latent_dim},
                     {"epitome_size", c.epitome_size},
                     {"epitome_stride", c.epitome_stride},
                     {"depth", c.depth},
                     {"hidden", c.hidden},
                     {"kl_weight", c.kl_weight},
                     {"dropout_rate", c.dropout_rate},
                     {"decoder", to_string(c.decoder)},
                     {"logvar_clamp", c.logvar_clamp},
                     {"mvae_hidden", c.mvae_hidden}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::set<std::string> known = {"variant",  "obs_dim",   "latent_dim",   "epitome_size",
                                              "epitome_stride", "depth", "hidden",     "kl_weight",
                                              "dropout_rate",   "decoder", "logvar_clamp", "mvae_hidden"};
  if (!j.is_object()) throw ConfigError("model: expected an object");
  std::string unknown;
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) unknown += (unknown.empty() ? "" : ", ") + ("model." + k);
  }
  if (!unknown.empty()) throw ConfigError("unknown keys: " + unknown);

  ModelConfig d;
  c = d;
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  if (j.contains("decoder")) c.decoder = parse_decoder_family(j.at("decoder").get<std::string>());
  c.obs_dim = j.value("obs_dim", d.obs_dim);
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.epitome_size = j.value("epitome_size", d.epitome_size);
  c.epitome_stride = j.value("epitome_stride", d.epitome_stride);
  c.depth = j.value("depth", d.depth);
  c.hidden = j.value("hidden", d.hidden);
  c.kl_weight = j.value("kl_weight", d.kl_weight);
  c.dropout_rate = j.value("dropout_rate", d.dropout_rate);
  c.logvar_clamp = j.value("logvar_clamp", d.logvar_clamp);
  c.mvae_hidden = j.value("mvae_hidden", d.mvae_hidden);
}

}  // namespace evae
