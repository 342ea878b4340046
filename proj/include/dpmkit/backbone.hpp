#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dpmkit/common.hpp"
#include "dpmkit/image.hpp"
#include "dpmkit/params.hpp"
#include "dpmkit/tape.hpp"

namespace dpmkit {

struct BackboneConfig {
  int image_height = 64;
  int image_width = 32;
  int patch_size = 8;
  int patch_stride = 8;
  int embed_dim = 64;      // c
  int projected_dim = 32;  // c_out
  int num_layers = 4;
  int num_heads = 4;
  int num_cameras = 2;
  double camera_coeff = 1.0;  // lambda on the camera embedding

  void validate() const {
    require(patch_size <= image_height && patch_size <= image_width, ErrorKind::config,
            "backbone: patch size exceeds image");
    require(patch_stride >= 1, ErrorKind::config, "backbone: stride must be >= 1");
    require(embed_dim % num_heads == 0, ErrorKind::config,
            "backbone: embed_dim not divisible by num_heads");
    require(projected_dim <= embed_dim, ErrorKind::config,
            "backbone: projected_dim exceeds embed_dim");
    require(camera_coeff >= 0.0, ErrorKind::config, "backbone: camera_coeff must be >= 0");
    require(num_layers >= 1 && num_heads >= 1 && num_cameras >= 1, ErrorKind::config,
            "backbone: counts must be positive");
  }

  int grid_rows() const { return (image_height - patch_size) / patch_stride + 1; }
  int grid_cols() const { return (image_width - patch_size) / patch_stride + 1; }
  int head_dim() const { return embed_dim / num_heads; }
};

// D = floor((H - S_p)/s_d + 1) * floor((W - S_p)/s_d + 1)
inline int count_patches(const BackboneConfig& cfg) {
  cfg.validate();
  const int rows = int(std::floor(double(cfg.image_height - cfg.patch_size) / cfg.patch_stride + 1.0));
  const int cols = int(std::floor(double(cfg.image_width - cfg.patch_size) / cfg.patch_stride + 1.0));
  return rows * cols;
}

// All per-layer token snapshots plus the CLS readout.
struct TokenSequence {
  std::vector<Mat> tokens_per_layer;  // num_layers+1 arrays, each (1+D) x c
  Mat cls_feature;                    // 1 x c, post final norm
  Mat projected_cls;                  // 1 x c_out
};

// Last-block CLS->patch attention, one probability row per head.
struct AttentionStack {
  Mat cls_attention;  // num_heads x D
};

// Tape handles produced by one forward pass.
struct BackboneOut {
  std::vector<Var> layers;  // num_layers+1 token arrays
  Var cls;                  // 1 x c
  Var cls_proj;             // 1 x c_out
  Var cls_attention;        // num_heads x D, rows sum to 1
};

class ViTBackbone {
 public:
  explicit ViTBackbone(BackboneConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const BackboneConfig& config() const { return cfg_; }
  int num_patches() const { return count_patches(cfg_); }

  void init_params(ParamStore& store, std::mt19937_64& rng) const {
    const int c = cfg_.embed_dim;
    const int in_dim = cfg_.patch_size * cfg_.patch_size * 3;
    const int d = num_patches();
    store.add(p("patch.w"), Mat::randn(in_dim, c, rng, 1.0 / std::sqrt(double(in_dim))));
    store.add(p("patch.b"), Mat::zeros(1, c));
    store.add(p("cls"), Mat::randn(1, c, rng, 0.02));
    store.add(p("pos"), Mat::randn(1 + d, c, rng, 0.02));
    store.add(p("cam"), Mat::randn(cfg_.num_cameras, c, rng, 0.02));
    const double ws = 1.0 / std::sqrt(double(c));
    for (int l = 0; l < cfg_.num_layers; ++l) {
      const std::string b = p("block" + std::to_string(l) + ".");
      store.add(b + "ln1.g", Mat::ones(1, c));
      store.add(b + "ln1.b", Mat::zeros(1, c));
      store.add(b + "wq", Mat::randn(c, c, rng, ws));
      store.add(b + "bq", Mat::zeros(1, c));
      store.add(b + "wk", Mat::randn(c, c, rng, ws));
      store.add(b + "bk", Mat::zeros(1, c));
      store.add(b + "wv", Mat::randn(c, c, rng, ws));
      store.add(b + "bv", Mat::zeros(1, c));
      store.add(b + "wo", Mat::randn(c, c, rng, ws));
      store.add(b + "bo", Mat::zeros(1, c));
      store.add(b + "ln2.g", Mat::ones(1, c));
      store.add(b + "ln2.b", Mat::zeros(1, c));
      store.add(b + "mlp.w1", Mat::randn(c, 4 * c, rng, ws));
      store.add(b + "mlp.b1", Mat::zeros(1, 4 * c));
      store.add(b + "mlp.w2", Mat::randn(4 * c, c, rng, 1.0 / std::sqrt(4.0 * c)));
      store.add(b + "mlp.b2", Mat::zeros(1, c));
    }
    store.add(p("lnf.g"), Mat::ones(1, c));
    store.add(p("lnf.b"), Mat::zeros(1, c));
    store.add(p("proj.w"), Mat::randn(c, cfg_.projected_dim, rng, ws));
    store.add(p("proj.b"), Mat::zeros(1, cfg_.projected_dim));
  }

  // Flattens the strided patch grid of `img`, row-major over (grid row, grid
  // col), each patch row-major over (y, x, channel).
  Mat extract_patches(const Image& img) const {
    require(img.h == cfg_.image_height && img.w == cfg_.image_width, ErrorKind::shape,
            "tokenize: image dims do not match config");
    const int gr = cfg_.grid_rows(), gc = cfg_.grid_cols();
    const int sp = cfg_.patch_size, sd = cfg_.patch_stride;
    Mat out(gr * gc, sp * sp * 3);
    for (int r = 0; r < gr; ++r)
      for (int cidx = 0; cidx < gc; ++cidx) {
        const int y0 = r * sd, x0 = cidx * sd;
        double* row = &out.a[size_t(r * gc + cidx) * out.cols];
        int k = 0;
        for (int y = 0; y < sp; ++y)
          for (int x = 0; x < sp; ++x)
            for (int ch = 0; ch < 3; ++ch) row[k++] = img.at(y0 + y, x0 + x, ch);
      }
    return out;
  }

  // Eq.-style layer-0 tokens: [cls; proj(patches)] + pos + lambda*cam[camera].
  Var tokenize(Graph& g, const Image& img, int camera_id, bool trainable = true) const {
    require(camera_id >= 0 && camera_id < cfg_.num_cameras, ErrorKind::index,
            "tokenize: camera_id out of range");
    Tape& t = g.tape;
    Var patches = t.constant(extract_patches(img));
    auto P = [&](const std::string& n) { return trainable ? g.param(p(n)) : g.frozen(p(n)); };
    Var proj = t.add_rowvec(t.matmul(patches, P("patch.w")), P("patch.b"));
    Var tokens = t.concat_rows({P("cls"), proj});
    tokens = t.add(tokens, P("pos"));
    if (cfg_.camera_coeff != 0.0) {
      Var cam_row = t.row(P("cam"), camera_id);
      tokens = t.add_rowvec(tokens, t.scale(cam_row, cfg_.camera_coeff));
    }
    return tokens;
  }

  Mat tokenize_value(ParamStore& store, const Image& img, int camera_id) const {
    Graph g(store);
    return g.tape.val(tokenize(g, img, camera_id, /*trainable=*/false));
  }

  // Transformer stack over layer-0 tokens. Emits every layer's tokens, the
  // final CLS feature and projection, and the last block's CLS->patch
  // attention computed as softmax(q_cls K_img^T / sqrt(c/N_h)) over patch
  // keys only.
  BackboneOut forward(Graph& g, Var layer0, bool trainable = true) const {
    Tape& t = g.tape;
    const int d = num_patches();
    const int c = cfg_.embed_dim;
    require(t.rows(layer0) == 1 + d && t.cols(layer0) == c, ErrorKind::shape,
            "forward: tokens must be (1+D) x c");
    require(t.val(layer0).all_finite(), ErrorKind::numeric,
            "forward: non-finite values in input tokens");
    auto P = [&](const std::string& n) { return trainable ? g.param(p(n)) : g.frozen(p(n)); };

    BackboneOut out;
    out.layers.push_back(layer0);
    Var x = layer0;
    const int nh = cfg_.num_heads;
    const int dh = cfg_.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));

    for (int l = 0; l < cfg_.num_layers; ++l) {
      const std::string b = "block" + std::to_string(l) + ".";
      Var xn = t.layer_norm_rows(x, P(b + "ln1.g"), P(b + "ln1.b"));
      Var q = t.add_rowvec(t.matmul(xn, P(b + "wq")), P(b + "bq"));
      Var k = t.add_rowvec(t.matmul(xn, P(b + "wk")), P(b + "bk"));
      Var v = t.add_rowvec(t.matmul(xn, P(b + "wv")), P(b + "bv"));

      std::vector<Var> head_outs;
      std::vector<Var> cls_rows;
      for (int h = 0; h < nh; ++h) {
        Var qh = t.slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = t.slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = t.slice_cols(v, h * dh, (h + 1) * dh);
        Var logits = t.scale(t.matmul_nt(qh, kh), inv_sqrt_dh);
        Var attn = t.softmax_rows(logits);
        head_outs.push_back(t.matmul(attn, vh));
        if (l == cfg_.num_layers - 1) {
          // Eq.-18 attention: CLS query against patch keys only
          Var q_cls = t.slice_rows(qh, 0, 1);
          Var k_img = t.slice_rows(kh, 1, 1 + d);
          Var row = t.softmax_rows(t.scale(t.matmul_nt(q_cls, k_img), inv_sqrt_dh));
          cls_rows.push_back(row);
        }
      }
      Var merged = t.concat_cols(head_outs);
      Var attn_out = t.add_rowvec(t.matmul(merged, P(b + "wo")), P(b + "bo"));
      x = t.add(x, attn_out);

      Var yn = t.layer_norm_rows(x, P(b + "ln2.g"), P(b + "ln2.b"));
      Var h1 = t.gelu(t.add_rowvec(t.matmul(yn, P(b + "mlp.w1")), P(b + "mlp.b1")));
      Var h2 = t.add_rowvec(t.matmul(h1, P(b + "mlp.w2")), P(b + "mlp.b2"));
      x = t.add(x, h2);

      out.layers.push_back(x);
      if (l == cfg_.num_layers - 1) out.cls_attention = t.concat_rows(cls_rows);
    }

    Var xf = t.layer_norm_rows(x, P("lnf.g"), P("lnf.b"));
    out.cls = t.row(xf, 0);
    out.cls_proj = t.add_rowvec(t.matmul(out.cls, P("proj.w")), P("proj.b"));
    return out;
  }

  // Value-level forward for inference and evaluation.
  std::pair<TokenSequence, AttentionStack> forward_value(ParamStore& store,
                                                         const Mat& layer0) const {
    Graph g(store);
    Var tokens = g.tape.leaf(layer0);
    BackboneOut out = forward(g, tokens, /*trainable=*/false);
    TokenSequence seq;
    for (Var v : out.layers) seq.tokens_per_layer.push_back(g.tape.val(v));
    seq.cls_feature = g.tape.val(out.cls);
    seq.projected_cls = g.tape.val(out.cls_proj);
    AttentionStack attn;
    attn.cls_attention = g.tape.val(out.cls_attention);
    return {seq, attn};
  }

  Mat embed_value(ParamStore& store, const Image& img, int camera_id) const {
    Graph g(store);
    Var tokens = tokenize(g, img, camera_id, /*trainable=*/false);
    BackboneOut out = forward(g, tokens, /*trainable=*/false);
    return g.tape.val(out.cls_proj);
  }

  static std::string p(const std::string& suffix) { return "backbone." + suffix; }

 private:
  BackboneConfig cfg_;
};

}  // namespace dpmkit
