#include "unispoof/gradcheck.hpp"

#include "unispoof/heads.hpp"
#include "unispoof/hilo.hpp"
#include "unispoof/model.hpp"
#include "unispoof/swin.hpp"

namespace unispoof {

namespace {

using TD = Tensor<double>;
using Fn = std::function<TD(std::span<const TD>)>;

TD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TD::from(std::move(shape), std::move(v));
}

void randomize(TD& t, Rng& rng, double lo, double hi) {
  for (auto& v : t.data_mut()) v = rng.uniform(lo, hi);
}

struct Suite {
  std::vector<GradCheckEntry> out;
  Rng rng;

  void run(const std::string& name, const Fn& fn, std::vector<TD> inputs, double step = 1e-5, std::size_t coords = 0) {
    GradCheckOptions opt;
    opt.step = step;
    opt.max_coords = coords;
    opt.seed = derive_seed(rng.next_u64(), name);
    const auto r = grad_check(fn, std::move(inputs), opt);
    out.push_back({name, r.max_rel_error, r.checked});
  }

  void op(const std::string& name, const std::function<TD(std::span<const TD>)>& f, std::vector<TD> inputs) {
    Rng w(derive_seed(rng.next_u64(), "weights"));
    const std::uint64_t ws = w.next_u64();
    run("op." + name,
        [f, ws](std::span<const TD> in) {
          const TD y = f(in);
          if (y.numel() == 1) return y;
          Rng r(ws);
          return sum(mul(y, random_tensor(y.shape(), r)));
        },
        std::move(inputs));
  }
};

}  // namespace

std::vector<GradCheckEntry> gradcheck_suite(std::uint64_t seed) {
  Suite s{{}, Rng(derive_seed(seed, "gradcheck"))};
  Rng& rng = s.rng;
  const std::size_t n = 2, m = 3, k = 4;
  const TD a = random_tensor({n, m}, rng), same = random_tensor({n, m}, rng), b = random_tensor({m, k}, rng);
  const TD bt = random_tensor({k, m}, rng), bias = random_tensor({k}, rng), b3 = random_tensor({n, m, k}, rng);
  const TD img = random_tensor({n, 4, 4, m}, rng), kern = random_tensor({3, 3, m, k}, rng);

  s.op("add", [](auto in) { return add(in[0], in[1]); }, {a, same});
  s.op("sub", [](auto in) { return sub(in[0], in[1]); }, {a, same});
  s.op("mul", [](auto in) { return mul(in[0], in[1]); }, {a, same});
  s.op("scale", [](auto in) { return scale(in[0], 1.7); }, {a});
  s.op("add_scalar", [](auto in) { return add_scalar(in[0], 0.3); }, {a});
  s.op("add_broadcast", [](auto in) { return add_broadcast(in[0], in[1]); }, {b3, random_tensor({k}, rng)});
  s.op("relu", [](auto in) { return relu(in[0]); }, {a});
  s.op("gelu", [](auto in) { return gelu(in[0]); }, {a});
  s.op("sigmoid", [](auto in) { return sigmoid(in[0]); }, {a});
  s.op("sum", [](auto in) { return sum(in[0]); }, {a});
  s.op("mean", [](auto in) { return mean(in[0]); }, {a});
  s.op("global_avg_pool", [](auto in) { return global_avg_pool(in[0]); }, {img});
  s.op("matmul", [](auto in) { return matmul(in[0], in[1]); }, {a, b});
  s.op("matmul_nt", [](auto in) { return matmul_nt(in[0], in[1]); }, {a, bt});
  s.op("bmm", [](auto in) { return bmm(in[0], in[1], false); }, {b3, random_tensor({n, k, 2}, rng)});
  s.op("bmm_nt", [](auto in) { return bmm(in[0], in[1], true); }, {b3, random_tensor({n, k + 1, k}, rng)});
  s.op("linear", [](auto in) { return linear(in[0], in[1], in[2]); }, {a, b, bias});
  s.op("reshape", [](auto in) { return reshape(in[0], {n * m * k}); }, {b3});
  s.op("permute", [](auto in) { return permute(in[0], {2, 0, 1}); }, {b3});
  auto map = std::make_shared<const std::vector<std::uint32_t>>(std::vector<std::uint32_t>{2, 0, 0, 1});
  s.op("gather_rows", [map](auto in) { return gather_rows(in[0], 3, 1, map, {4}); }, {random_tensor({3}, rng)});
  s.op("concat_last", [](auto in) { return concat_last<double>({in[0], in[1]}); }, {a, same});
  s.op("slice_last", [](auto in) { return slice_last(in[0], 1, 3); }, {b3});
  s.op("slice_first", [](auto in) { return slice_first(in[0], 0, 1); }, {b3});
  s.op("softmax", [](auto in) { return softmax(in[0]); }, {b3});
  s.op("layer_norm", [](auto in) { return layer_norm(in[0], in[1], in[2]); },
       {b3, random_tensor({k}, rng), random_tensor({k}, rng)});
  s.op("l2_normalize", [](auto in) { return l2_normalize(in[0]); }, {b3});
  s.op("conv2d", [](auto in) { return conv2d(in[0], in[1], in[2], 1, 1); }, {img, kern, bias});
  s.op("pool2d_avg", [](auto in) { return pool2d(in[0], 2, PoolMode::kAvg); }, {img});
  s.op("pool2d_max", [](auto in) { return pool2d(in[0], 2, PoolMode::kMax); }, {img});
  const std::vector<std::size_t> labels{1, 2};
  s.op("cross_entropy", [labels](auto in) { return cross_entropy(in[0], labels); }, {a});
  s.op("arcface_logits", [labels](auto in) { return cross_entropy(arcface_logits(in[0], labels, 32.0, 0.5), labels); },
       {random_tensor({n, m}, rng, -0.9, 0.9)});
  const std::vector<double> ylab{1, 0, 0, 1, 1, 0};
  s.op("bce", [ylab](auto in) { return bce(in[0], std::span<const double>(ylab)); }, {random_tensor({n, m}, rng, 0.05, 0.95)});

  // shifted window block with a live relative-bias table
  {
    auto layout = std::make_shared<const WindowLayout>(build_window_layout(8, 8, 4, true));
    auto blk = make_swin_block<double>(8, 2, 16, layout, true, rng);
    randomize(blk.rel_bias_table, rng, -0.2, 0.2);
    s.run("block.swin_shifted",
          [blk, ws = rng.next_u64()](std::span<const TD> in) {
            auto b = blk;
            b.qkv.weight = in[1];
            b.rel_bias_table = in[2];
            b.fc1.weight = in[3];
            Rng r(ws);
            const TD y = swin_block(b, in[0]);
            return sum(mul(y, random_tensor(y.shape(), r)));
          },
          {random_tensor({1, 8, 8, 8}, rng), blk.qkv.weight.detach(), blk.rel_bias_table.detach(), blk.fc1.weight.detach()},
          1e-5, 48);
  }
  // HiLo with both paths active
  {
    auto p = HiLoParams<double>::init(HiLoConfig{8, 4, 2, 2}, rng, true);
    s.run("block.hilo",
          [p, ws = rng.next_u64()](std::span<const TD> in) {
            auto q = p;
            q.hi_qkv.weight = in[1];
            q.lo_kv.weight = in[2];
            q.lo_proj.weight = in[3];
            Rng r(ws);
            const TD y = hilo_attend(q, in[0]);
            return sum(mul(y, random_tensor(y.shape(), r)));
          },
          {random_tensor({1, 4, 4, 8}, rng), p.hi_qkv.weight.detach(), p.lo_kv.weight.detach(), p.lo_proj.weight.detach()},
          1e-5, 48);
  }
  // ArcFace head at full-scale settings (s = 32, m = 0.5)
  {
    ArcFaceConfig c;
    c.classes = 5;
    c.embedding_dim = 6;
    auto head = ArcFaceHead<double>::init(c, rng);
    const std::vector<std::size_t> y{0, 3, 4};
    s.run("head.arcface",
          [head, y](std::span<const TD> in) {
            auto h = head;
            h.weight = in[1];
            return arcface_loss(h, l2_normalize(in[0]), y);
          },
          {random_tensor({3, 6}, rng), head.weight.detach()});
  }
  // End to end: depths (1,1,2,1) backbone, FRM + ArcFace on the final
  // stage and the HiLo UAD head with BCE on the last third-stage block.
  {
    ModelConfig mc = swin_desk_model();
    mc.swin.depths = {1, 1, 2, 1};
    mc.arcface.classes = 3;
    mc.arcface.scale = 32.0;
    mc.arcface.margin = 0.5;
    auto backbone = SwinBackbone<double>::init(mc.swin, rng);
    for (auto& p : backbone.params()) {
      auto t = p.tensor;
      if (p.name.find("bias") != std::string::npos) randomize(t, rng, -0.2, 0.2);
    }
    auto frm = FrmHead<double>::init(mc.swin.stage_dim(3), mc.arcface.embedding_dim, rng);
    auto arc = ArcFaceHead<double>::init(mc.arcface, rng);
    auto uad = UadHead<double>::init(mc.uad_for(Tap::at(1)), rng);
    const std::vector<std::size_t> ids{0, 2};
    const std::vector<double> live{1, 0};
    s.run("model.end_to_end",
          [=](std::span<const TD> in) {
            auto bb = backbone;
            bb.stages[0][0].qkv.weight = in[1];
            bb.stages[2][1].rel_bias_table = in[2];
            bb.merges[1].reduction.weight = in[3];
            bb.stages[3][0].fc2.weight = in[4];
            auto f = frm;
            f.embed.weight = in[5];
            auto ah = arc;
            ah.weight = in[6];
            auto u = uad;
            u.hilo.hi_qkv.weight = in[7];
            u.hilo.lo_q.weight = in[8];
            u.conv1_weight = in[9];
            const auto feats = encode(bb, in[0]);
            const TD frm_loss = arcface_loss(ah, frm_embed(f, feats.final), ids);
            const TD uad_loss = bce_loss(uad_forward(u, feats.stage3_blocks[1]), std::span<const double>(live));
            return add(frm_loss, uad_loss);
          },
          {random_tensor({2, 64, 64, 3}, rng), backbone.stages[0][0].qkv.weight.detach(),
           backbone.stages[2][1].rel_bias_table.detach(), backbone.merges[1].reduction.weight.detach(),
           backbone.stages[3][0].fc2.weight.detach(), frm.embed.weight.detach(), arc.weight.detach(),
           uad.hilo.hi_qkv.weight.detach(), uad.hilo.lo_q.weight.detach(), uad.conv1_weight.detach()},
          1e-5, 16);
  }
  return s.out;
}

}  // namespace unispoof
