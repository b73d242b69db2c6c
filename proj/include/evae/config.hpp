// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace evae {

enum class Variant { vae, dropout_vae, evae, mvae };
enum class DecoderFamily { bernoulli, gaussian };

std::string to_string(Variant v);
std::string to_string(DecoderFamily f);
Variant parse_variant(const std::string& s);
DecoderFamily parse_decoder_family(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::vae;
  int obs_dim = 784;        // N
  int latent_dim = 50;      // D
  int epitome_size = 0;     // K; 0 means "same as latent_dim"
  int epitome_stride = 0;   // s; 0 means "same as epitome_size"
  int depth = 1;            // L, hidden layers in encoder and in decoder
  int hidden = 200;         // H
  double kl_weight = 1.0;   // lambda
  double dropout_rate = 0.0;
  DecoderFamily decoder = DecoderFamily::bernoulli;
  double logvar_clamp = 7.0;
  // Per-component width for mvae. 0 = derived with mvae_hidden_size().
  int mvae_hidden = 0;

  // Fills K, s (and mvae_hidden) defaults; throws ConfigError on violations.
  ModelConfig resolved() const;
  void validate() const;

  int num_epitomes() const;  // M = (D - K) / s + 1
  bool has_epitomes() const { return variant == Variant::evae || variant == Variant::mvae; }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace evae
