#include "drivesim/policy.hpp"

#include <cmath>
#include <stdexcept>

namespace drivesim::policy {

namespace {

using ad::Tensor;
using ad::Var;

Tensor rand_tensor(std::vector<int> shape, double bound, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& x : t.vec()) x = rng.uniform(-bound, bound);
  return t;
}

void add_linear(ParamStore& s, const std::string& prefix, int in, int out, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in));
  s.add(prefix + "w", rand_tensor({in, out}, bound, rng));
  s.add(prefix + "b", rand_tensor({out}, bound, rng));
}

void add_layer_norm(ParamStore& s, const std::string& prefix, int dim, Rng&) {
  s.add(prefix + "g", Tensor::full({dim}, 1.0));
  s.add(prefix + "b", Tensor::zeros({dim}));
}

const char* kModalities[4] = {"ego.", "obj.", "map.", "light."};
const int kModalityDims[4] = {world::kAgentFeatures, world::kAgentFeatures,
                              world::kMapFeatures, world::kLightFeatures};

void add_token_net(ParamStore& s, const std::string& prefix, const PolicyConfig& cfg, Rng& rng) {
  const int w = cfg.token_dim, e = cfg.enc_dim, dh = cfg.token_dim / cfg.heads;
  s.add(prefix + "token.q", rand_tensor({w}, 1.0 / std::sqrt(static_cast<double>(w)), rng));
  for (int m = 0; m < 4; ++m) {
    std::string p = prefix + "token." + kModalities[m];
    add_linear(s, p + "enc1.", kModalityDims[m], e, rng);
    add_linear(s, p + "enc2.", e, e, rng);
    add_linear(s, p + "attn.q.", w, w, rng);
    add_linear(s, p + "attn.k.", e, w, rng);
    add_linear(s, p + "attn.v.", e, w, rng);
    double bound = 1.0 / std::sqrt(static_cast<double>(w));
    for (int h = 0; h < cfg.heads; ++h)
      s.add(p + "attn.o" + std::to_string(h) + ".w", rand_tensor({dh, w}, bound, rng));
    s.add(p + "attn.o.b", rand_tensor({w}, bound, rng));
    add_layer_norm(s, p + "ln1.", w, rng);
    add_linear(s, p + "ffn1.", w, cfg.ffn_mult * w, rng);
    add_linear(s, p + "ffn2.", cfg.ffn_mult * w, w, rng);
    add_layer_norm(s, p + "ln2.", w, rng);
  }
}

const char* type_name(world::AgentType t) {
  switch (t) {
    case world::AgentType::kVehicle: return "vehicle";
    case world::AgentType::kPedestrian: return "pedestrian";
    default: return "cyclist";
  }
}

int action_dim(world::AgentType t) { return t == world::AgentType::kPedestrian ? 3 : 2; }

// Vector through a linear layer: y = x W + b.
Var linear_v(const TapeBinding& p, Var x, const std::string& prefix) {
  return add(matmul(x, p(prefix + "w")), p(prefix + "b"));
}

// Matrix rows through a linear layer, bias broadcast over rows.
Var linear_m(const TapeBinding& p, Var x, const std::string& prefix) {
  return add(matmul(x, p(prefix + "w")), p(prefix + "b"));
}

Var layer_norm_v(Var x, Var g, Var b) {
  Var centered = sub(x, mean(x));
  Var inv = ad::sqrt(add_const(mean(square(centered)), 1e-5));
  return add(mul(div(centered, inv), g), b);
}

Var layer_norm_rows(Var x, Var g, Var b) {
  int rows = x.val().dim(0);
  std::vector<Var> out;
  out.reserve(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) out.push_back(layer_norm_v(gather_row(x, r), g, b));
  return stack_rows(out);
}

// One cross-attention + feed-forward block updating the query vector from a
// modality's encoded elements.
Var attend_block(const TapeBinding& p, Var query, Var elements, const std::string& prefix,
                 const PolicyConfig& cfg) {
  const int dh = cfg.token_dim / cfg.heads;
  Var enc = relu(linear_m(p, elements, prefix + "enc1."));
  enc = add(matmul(enc, p(prefix + "enc2.w")), p(prefix + "enc2.b"));

  Var q = linear_v(p, query, prefix + "attn.q.");
  Var k = linear_m(p, enc, prefix + "attn.k.");
  Var v = linear_m(p, enc, prefix + "attn.v.");
  Var attn_out;
  for (int h = 0; h < cfg.heads; ++h) {
    Var qh = slice(q, h * dh, dh);
    Var kh = slice_cols(k, h * dh, dh);
    Var vh = slice_cols(v, h * dh, dh);
    Var scores = scale(matmul(kh, qh), 1.0 / std::sqrt(static_cast<double>(dh)));
    Var probs = softmax(scores);
    Var oh = matmul(matmul(probs, vh), p(prefix + "attn.o" + std::to_string(h) + ".w"));
    attn_out = h == 0 ? oh : add(attn_out, oh);
  }
  attn_out = add(attn_out, p(prefix + "attn.o.b"));
  Var q1 = layer_norm_v(add(query, attn_out), p(prefix + "ln1.g"), p(prefix + "ln1.b"));
  Var f = linear_v(p, relu(linear_v(p, q1, prefix + "ffn1.")), prefix + "ffn2.");
  return layer_norm_v(add(q1, f), p(prefix + "ln2.g"), p(prefix + "ln2.b"));
}

}  // namespace

PolicyConfig PolicyConfig::scaled(double s) const {
  PolicyConfig c = *this;
  auto rounded = [&](int v) {
    int x = static_cast<int>(std::lround(v * s));
    x = std::max(heads, x);
    return (x + heads - 1) / heads * heads;  // keep divisible by heads
  };
  c.token_dim = rounded(token_dim);
  c.gru_hidden = rounded(gru_hidden);
  c.latent_dim = c.token_dim;
  c.enc_dim = std::max(4, static_cast<int>(std::lround(enc_dim * s)));
  return c;
}

ad::Tensor& ParamStore::add(const std::string& name, ad::Tensor init) {
  if (index_.count(name) != 0) throw std::invalid_argument("ParamStore: duplicate name " + name);
  index_[name] = static_cast<int>(entries_.size());
  entries_.push_back({name, std::move(init)});
  return entries_.back().value;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) != 0; }

ad::Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
  return entries_[static_cast<std::size_t>(it->second)].value;
}

const ad::Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
  return entries_[static_cast<std::size_t>(it->second)].value;
}

int ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

std::size_t ParamStore::count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const Entry& e : entries_)
    if (e.name.rfind(prefix, 0) == 0) n += e.value.size();
  return n;
}

void init_policy_params(ParamStore& s, const PolicyConfig& cfg, Rng& rng) {
  if (cfg.token_dim % cfg.heads != 0)
    throw std::invalid_argument("init_policy_params: heads must divide token_dim");
  const int w = cfg.token_dim, k = cfg.codebook_size, d = cfg.latent_dim, hid = cfg.gru_hidden;

  add_token_net(s, "hl.", cfg, rng);
  add_linear(s, "hl.head.fc1.", w, w, rng);
  add_linear(s, "hl.head.fc2.", w, w, rng);
  add_linear(s, "hl.head.fc3.", w, k, rng);

  double cb_bound = 1.0 / k;
  s.add("cb.vehicle", rand_tensor({k, d}, cb_bound, rng));
  s.add("cb.pedestrian", rand_tensor({k, d}, cb_bound, rng));
  s.add("cb.cyclist", rand_tensor({k, d}, cb_bound, rng));

  add_token_net(s, "ll.", cfg, rng);
  for (const char* gate : {"r", "z", "n"}) {
    std::string g(gate);
    double bx = 1.0 / std::sqrt(static_cast<double>(w));
    double bh = 1.0 / std::sqrt(static_cast<double>(hid));
    s.add("ll.gru.wx" + g, rand_tensor({w, hid}, bx, rng));
    s.add("ll.gru.wh" + g, rand_tensor({hid, hid}, bh, rng));
    s.add("ll.gru.b" + g, rand_tensor({hid}, bh, rng));
  }
  for (world::AgentType t : {world::AgentType::kVehicle, world::AgentType::kPedestrian,
                             world::AgentType::kCyclist}) {
    std::string p = std::string("ll.head.") + type_name(t) + ".";
    add_linear(s, p + "fc1.", hid + d, w, rng);
    add_linear(s, p + "fc2.", w, action_dim(t), rng);
  }

  add_token_net(s, "post.", cfg, rng);
  add_linear(s, "post.state.", 4, w, rng);
  add_linear(s, "post.fuse.", 2 * w, w, rng);
  add_linear(s, "post.sa.q.", w, w, rng);
  add_linear(s, "post.sa.k.", w, w, rng);
  add_linear(s, "post.sa.v.", w, w, rng);
  double bound = 1.0 / std::sqrt(static_cast<double>(w));
  for (int h = 0; h < cfg.heads; ++h)
    s.add("post.sa.o" + std::to_string(h) + ".w", rand_tensor({w / cfg.heads, w}, bound, rng));
  s.add("post.sa.o.b", rand_tensor({w}, bound, rng));
  add_layer_norm(s, "post.sa.ln1.", w, rng);
  add_linear(s, "post.sa.ffn1.", w, cfg.ffn_mult * w, rng);
  add_linear(s, "post.sa.ffn2.", cfg.ffn_mult * w, w, rng);
  add_layer_norm(s, "post.sa.ln2.", w, rng);
  add_layer_norm(s, "post.ln.", w, rng);
  add_linear(s, "post.head.fc1.", w, w, rng);
  add_linear(s, "post.head.fc2.", w, k, rng);
}

TapeBinding::TapeBinding(ad::Tape& tape, const ParamStore& store, bool as_leaves)
    : tape_(&tape), store_(&store) {
  vars_.reserve(store.entries().size());
  for (const ParamStore::Entry& e : store.entries())
    vars_.push_back(as_leaves ? tape.leaf(e.value) : tape.constant(e.value));
}

ad::Var TapeBinding::operator()(const std::string& name) const {
  int i = store_->index_of(name);
  if (i < 0) throw std::invalid_argument("TapeBinding: unknown parameter " + name);
  return vars_[static_cast<std::size_t>(i)];
}

ad::Var tokenize(const TapeBinding& params, const world::TracedObservation& obs,
                 const PolicyConfig& cfg, const std::string& prefix) {
  Var q = params(prefix + "token.q");
  const Var modality[4] = {obs.ego, obs.objects, obs.map_pts, obs.lights};
  for (int m = 0; m < 4; ++m) {
    if (!modality[m].valid()) continue;  // nothing visible in this modality
    q = attend_block(params, q, modality[m], prefix + "token." + kModalities[m], cfg);
  }
  return q;
}

ad::Var high_level_logits(const TapeBinding& params, ad::Var obs_embedding,
                          const PolicyConfig& cfg) {
  (void)cfg;
  Var h = relu(linear_v(params, obs_embedding, "hl.head.fc1."));
  h = relu(linear_v(params, h, "hl.head.fc2."));
  return linear_v(params, h, "hl.head.fc3.");
}

HighLevelSample sample_latent(const TapeBinding& params, ad::Var logits, world::AgentType type,
                              const PolicyConfig& cfg, const std::vector<double>& gumbel) {
  if (static_cast<int>(gumbel.size()) != cfg.codebook_size)
    throw std::invalid_argument("sample_latent: gumbel noise must have K entries");
  ad::Tape& tape = params.tape();
  HighLevelSample out;
  out.logits = logits;
  Var noisy = add(out.logits, tape.constant(Tensor::vector(gumbel)));
  out.onehot = st_onehot(noisy);
  out.z = matmul(out.onehot, params(std::string("cb.") + type_name(type)));
  const auto& oh = out.onehot.val().vec();
  for (std::size_t i = 0; i < oh.size(); ++i)
    if (oh[i] == 1.0) {
      out.index = static_cast<int>(i);
      break;
    }
  return out;
}

HighLevelSample high_level_sample(const TapeBinding& params, ad::Var obs_embedding,
                                  world::AgentType type, const PolicyConfig& cfg,
                                  const std::vector<double>& gumbel) {
  return sample_latent(params, high_level_logits(params, obs_embedding, cfg), type, cfg, gumbel);
}

ad::Var initial_hidden(const TapeBinding& params, const PolicyConfig& cfg) {
  return params.tape().constant(Tensor::zeros({cfg.gru_hidden}));
}

LowLevelOut low_level_step(const TapeBinding& params, ad::Var obs_embedding, ad::Var z,
                           ad::Var hidden, world::AgentType type, const PolicyConfig& cfg,
                           const world::KinematicParams& kp) {
  Var x = obs_embedding;
  Var r = sigmoid(add(add(matmul(x, params("ll.gru.wxr")), matmul(hidden, params("ll.gru.whr"))),
                      params("ll.gru.br")));
  Var zg = sigmoid(add(add(matmul(x, params("ll.gru.wxz")), matmul(hidden, params("ll.gru.whz"))),
                       params("ll.gru.bz")));
  Var n = ad::tanh(add(add(matmul(x, params("ll.gru.wxn")),
                           mul(r, matmul(hidden, params("ll.gru.whn")))),
                       params("ll.gru.bn")));
  Var h_next = add(mul(add_const(neg(zg), 1.0), n), mul(zg, hidden));

  std::string p = std::string("ll.head.") + type_name(type) + ".";
  Var a = relu(linear_v(params, ad::concat({h_next, z}), p + "fc1."));
  a = ad::tanh(linear_v(params, a, p + "fc2."));
  std::vector<double> bounds = type == world::AgentType::kPedestrian
                                   ? std::vector<double>{kp.max_delta_pos, kp.max_delta_pos,
                                                         kp.max_delta_psi}
                                   : std::vector<double>{kp.max_accel, kp.max_steer};
  LowLevelOut out;
  out.action = mul(a, params.tape().constant(Tensor::vector(bounds)));
  out.hidden = h_next;
  return out;
}

world::Action action_from_row(const ad::Var& action, world::AgentType type) {
  const auto& v = action.val().vec();
  world::Action a;
  a.u0 = v[0];
  a.u1 = v[1];
  if (type == world::AgentType::kPedestrian) a.u2 = v[2];
  return a;
}

PosteriorOut posterior_logits(const TapeBinding& params, const world::Scenario& sc, int agent,
                              const world::ObservationConfig& obs_cfg, const PolicyConfig& cfg) {
  const world::AgentSpec& spec = sc.agents[static_cast<std::size_t>(agent)];
  if (static_cast<int>(spec.logged.size()) < sc.last_step() + 1)
    throw std::invalid_argument("posterior_logits: logged trajectory shorter than the horizon");
  ad::Tape& tape = params.tape();
  const int w = cfg.token_dim, dh = w / cfg.heads;
  const int t_sim = sc.horizon;

  // Pose at the end of the warmup normalizes every later state.
  world::AgentState origin = spec.logged[static_cast<std::size_t>(sc.init_steps - 1)];
  double c0 = std::cos(origin.psi), s0 = std::sin(origin.psi);

  std::vector<const world::TracedState*> no_traced(sc.agents.size(), nullptr);
  std::vector<Var> step_rows;
  step_rows.reserve(static_cast<std::size_t>(t_sim));
  for (int t = 0; t < t_sim; ++t) {
    int ts = sc.init_steps - 1 + t;
    world::Scene scene = world::make_scene(sc, ts);
    std::vector<world::TracedState> hist;
    for (int h = ts - (obs_cfg.ego_history - 1); h <= ts; ++h)
      hist.push_back(world::trace_state(tape, world::logged_state_at(spec, h), false));
    world::TracedObservation obs =
        world::observe_traced(tape, scene, no_traced, agent, hist, obs_cfg);
    Var obs_emb = tokenize(params, obs, cfg, "post.");

    const world::AgentState& st = scene.states[static_cast<std::size_t>(agent)];
    double dx = st.x - origin.x, dy = st.y - origin.y;
    Tensor feat = Tensor::vector({c0 * dx + s0 * dy, -s0 * dx + c0 * dy,
                                  wrap_angle(st.psi - origin.psi), st.v});
    Var state_emb = linear_v(params, tape.constant(feat), "post.state.");
    step_rows.push_back(relu(linear_v(params, ad::concat({obs_emb, state_emb}), "post.fuse.")));
  }
  Var x = stack_rows(step_rows);

  // Additive sinusoidal step encoding so attention can see temporal order.
  Tensor pe = Tensor::zeros({t_sim, w});
  for (int t = 0; t < t_sim; ++t)
    for (int i = 0; i < w; ++i) {
      double angle = t / std::pow(10000.0, 2.0 * (i / 2) / w);
      pe.vec()[static_cast<std::size_t>(t * w + i)] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  x = add(x, tape.constant(pe));

  Var q = linear_m(params, x, "post.sa.q.");
  Var k = linear_m(params, x, "post.sa.k.");
  Var v = linear_m(params, x, "post.sa.v.");
  Var attn_out;
  for (int h = 0; h < cfg.heads; ++h) {
    Var qh = slice_cols(q, h * dh, dh);
    Var kh = slice_cols(k, h * dh, dh);
    Var vh = slice_cols(v, h * dh, dh);
    Var scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Var> prows;
    prows.reserve(static_cast<std::size_t>(t_sim));
    for (int r = 0; r < t_sim; ++r) prows.push_back(softmax(gather_row(scores, r)));
    Var oh = matmul(stack_rows(prows), vh);
    oh = matmul(oh, params("post.sa.o" + std::to_string(h) + ".w"));
    attn_out = h == 0 ? oh : add(attn_out, oh);
  }
  attn_out = add(attn_out, params("post.sa.o.b"));
  Var x1 = layer_norm_rows(add(x, attn_out), params("post.sa.ln1.g"), params("post.sa.ln1.b"));
  Var f = linear_m(params, relu(linear_m(params, x1, "post.sa.ffn1.")), "post.sa.ffn2.");
  Var x2 = layer_norm_rows(add(x1, f), params("post.sa.ln2.g"), params("post.sa.ln2.b"));
  x2 = layer_norm_rows(x2, params("post.ln.g"), params("post.ln.b"));

  PosteriorOut out;
  out.intervals = (t_sim + cfg.interval - 1) / cfg.interval;
  std::vector<Var> logit_rows;
  for (int i = 0; i < out.intervals; ++i) {
    int start = i * cfg.interval;
    int len = std::min(cfg.interval, t_sim - start);
    Var pooled = col_max(slice_rows(x2, start, len));
    Var hrow = relu(linear_v(params, pooled, "post.head.fc1."));
    logit_rows.push_back(linear_v(params, hrow, "post.head.fc2."));
  }
  out.logits = stack_rows(logit_rows);
  return out;
}

}  // namespace drivesim::policy
