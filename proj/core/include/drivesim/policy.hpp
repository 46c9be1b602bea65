#pragma once

#include <map>
#include <string>
#include <vector>

#include "drivesim/common.hpp"
#include "drivesim/tape.hpp"
#include "drivesim/world.hpp"

// Hierarchical driving policy: a TokenNet encoder turns multi-modal
// observations into one embedding, a high-level categorical head picks a
// codebook row as the behavioral latent (refreshed every `interval` steps),
// and a recurrent low-level head turns embedding + latent into bounded
// actions. A separate posterior network infers per-interval latent indices
// from a logged trajectory. All forward passes run on the gradient tape.
namespace drivesim::policy {

struct PolicyConfig {
  int token_dim = 128;      // embedding width W
  int enc_dim = 32;         // per-modality element encoder width
  int heads = 4;            // attention heads (must divide token_dim)
  int ffn_mult = 4;         // feed-forward expansion
  int codebook_size = 128;  // K rows per agent-type codebook
  int latent_dim = 128;     // D, behavioral latent width
  int gru_hidden = 128;     // recurrent state width
  int interval = 5;         // latent refresh period H (steps)

  // Shrunk copy for fast runs: hidden widths scale by `s` (rounded to a
  // multiple of `heads`), codebook count and interval stay put.
  PolicyConfig scaled(double s) const;
};

// Named parameter tensors in fixed registration order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ad::Tensor value;
  };

  ad::Tensor& add(const std::string& name, ad::Tensor init);
  bool has(const std::string& name) const;
  ad::Tensor& get(const std::string& name);
  const ad::Tensor& get(const std::string& name) const;
  int index_of(const std::string& name) const;  // -1 if absent

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  // Total element count over entries whose name starts with `prefix`.
  std::size_t count(const std::string& prefix = "") const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, int> index_;
};

// Creates every parameter tensor for the policy stack and the posterior,
// seeded deterministically. Group prefixes: "hl." high-level (TokenNet +
// index head), "cb." codebooks, "ll." low-level (TokenNet + GRU + per-type
// action heads), "post." posterior.
void init_policy_params(ParamStore& store, const PolicyConfig& cfg, Rng& rng);

// Parameters mounted on one tape, as leaves (trainable) or constants.
class TapeBinding {
 public:
  TapeBinding(ad::Tape& tape, const ParamStore& store, bool as_leaves = true);

  ad::Var operator()(const std::string& name) const;
  ad::Tape& tape() const { return *tape_; }
  const ParamStore& store() const { return *store_; }
  // Leaf var for the i-th store entry (gradient readout after backward).
  ad::Var var_at(int index) const { return vars_[static_cast<std::size_t>(index)]; }

 private:
  ad::Tape* tape_;
  const ParamStore* store_;
  std::vector<ad::Var> vars_;
};

// 1 when a new behavioral latent is due (every `interval` steps from 0).
inline int temporal_gate(int t, int interval) { return t % interval == 0 ? 1 : 0; }

// Observation -> embedding vector {W}. One learned query attends to each
// modality in turn (ego, objects, map, lights); invalid modalities are
// skipped. `prefix` selects the owning TokenNet ("hl.", "ll." or "post.").
ad::Var tokenize(const TapeBinding& params, const world::TracedObservation& obs,
                 const PolicyConfig& cfg, const std::string& prefix);

struct HighLevelSample {
  ad::Var logits;  // {K}
  ad::Var onehot;  // {K}, hard one-hot, straight-through backward
  ad::Var z;       // {D}, selected codebook row
  int index = -1;
};

// Prior index logits {K} from an observation embedding, without sampling.
ad::Var high_level_logits(const TapeBinding& params, ad::Var obs_embedding,
                          const PolicyConfig& cfg);

// Perturbed-argmax selection from explicit index logits: `gumbel` holds K
// noise values (all-zero means deterministic argmax). The returned z is
// exactly the selected codebook row; gradients reach both the logits and
// that row. Shared by the prior and posterior sampling paths.
HighLevelSample sample_latent(const TapeBinding& params, ad::Var logits, world::AgentType type,
                              const PolicyConfig& cfg, const std::vector<double>& gumbel);

// sample_latent applied to the prior logits of `obs_embedding`.
HighLevelSample high_level_sample(const TapeBinding& params, ad::Var obs_embedding,
                                  world::AgentType type, const PolicyConfig& cfg,
                                  const std::vector<double>& gumbel);

struct LowLevelOut {
  ad::Var action;  // {2} accel/steer, or {3} dx/dy/dpsi for pedestrians
  ad::Var hidden;  // {gru_hidden}
};

// Zero recurrent state.
ad::Var initial_hidden(const TapeBinding& params, const PolicyConfig& cfg);

// One recurrent step: embedding through the GRU, hidden state concatenated
// with z into the per-type action head, tanh-scaled to the action bounds.
LowLevelOut low_level_step(const TapeBinding& params, ad::Var obs_embedding, ad::Var z,
                           ad::Var hidden, world::AgentType type, const PolicyConfig& cfg,
                           const world::KinematicParams& kp);

// Plain action struct from an action row (values only).
world::Action action_from_row(const ad::Var& action, world::AgentType type);

struct PosteriorOut {
  ad::Var logits;     // (intervals x K)
  int intervals = 0;
};

// Per-interval latent index logits from the logged trajectory of `agent`:
// per-step observation embeddings fused with the state normalized to the
// pose at the warmup end, self-attention across time with a sinusoidal step
// encoding, per-interval column max pooling, shared index head. The log must
// cover the full horizon; the last interval may be short if the horizon is
// not a multiple of `interval`.
PosteriorOut posterior_logits(const TapeBinding& params, const world::Scenario& sc, int agent,
                              const world::ObservationConfig& obs_cfg, const PolicyConfig& cfg);

}  // namespace drivesim::policy
