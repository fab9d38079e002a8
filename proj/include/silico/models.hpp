#pragma once

// Network constructors and forward-shape contracts: multi-head ResNet-9
// generator with tanh output, per-organelle PatchGAN discriminators, a
// UNet++ backbone variant, and the dynamic first convolution whose
// parameters are generated from a one-hot modality code.

#include <array>
#include <memory>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include "silico/core.hpp"

namespace silico {

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

struct GeneratorSpec {
    int64_t base_width = 64;   // test tier 8
    int64_t n_resblocks = 9;   // test tier 2
    int64_t in_channels = 1;
    static constexpr int64_t n_heads = kNumOrganelles;

    void validate() const {
        if (base_width < 1 || n_resblocks < 1 || in_channels < 1)
            throw ConfigError("invalid GeneratorSpec");
    }
};

struct DiscriminatorSpec {
    int64_t base_width = 64;  // test tier 8
    int64_t n_layers = 3;     // 70x70 receptive field

    void validate() const {
        if (base_width < 1 || n_layers < 1) throw ConfigError("invalid DiscriminatorSpec");
    }
};

struct UnetPPSpec {
    int64_t depth = 4;  // test tier 2
    int64_t base_width = 64;
    int64_t in_channels = 1;
    static constexpr bool deep_supervision = false;

    void validate() const {
        if (depth < 1 || base_width < 1 || in_channels < 1)
            throw ConfigError("invalid UnetPPSpec");
    }
};

// ---------------------------------------------------------------------------
// Modality codes
// ---------------------------------------------------------------------------

// One-hot vector of length 3 ordered (BF, PC, DIC).
inline torch::Tensor modality_code(Modality m) {
    auto code = torch::zeros({kNumModalities}, torch::kFloat32);
    code[modality_index(m)] = 1.0f;
    return code;
}

inline torch::Tensor modality_codes(const std::vector<Modality>& ms) {
    auto codes = torch::zeros({static_cast<int64_t>(ms.size()), kNumModalities},
                              torch::kFloat32);
    for (size_t i = 0; i < ms.size(); ++i) codes[static_cast<int64_t>(i)][modality_index(ms[i])] = 1.0f;
    return codes;
}

// Exactly one component 1, the rest 0; accepts (3,) or (B, 3).
inline void validate_one_hot(const torch::Tensor& code) {
    auto c = code.dim() == 1 ? code.unsqueeze(0) : code;
    if (c.dim() != 2 || c.size(1) != kNumModalities) {
        throw ValidationError("modality code must have 3 components");
    }
    auto cd = c.to(torch::kFloat64);
    const bool binary = ((cd == 0.0) | (cd == 1.0)).all().item<bool>();
    const bool one = (cd.sum(1) == 1.0).all().item<bool>();
    if (!binary || !one) throw ValidationError("modality code is not one-hot");
}

// ---------------------------------------------------------------------------
// Weight init (pix2pix convention: conv weights ~ N(0, 0.02), zero biases)
// ---------------------------------------------------------------------------

inline void weights_init(torch::nn::Module& m) {
    torch::NoGradGuard no_grad;
    if (auto* conv = m.as<torch::nn::Conv2d>()) {
        conv->weight.normal_(0.0, 0.02);
        if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* dconv = m.as<torch::nn::ConvTranspose2d>()) {
        dconv->weight.normal_(0.0, 0.02);
        if (dconv->bias.defined()) dconv->bias.zero_();
    } else if (auto* lin = m.as<torch::nn::Linear>()) {
        lin->weight.normal_(0.0, 0.02);
        if (lin->bias.defined()) lin->bias.zero_();
    }
}

inline int64_t count_parameters(const torch::nn::Module& m) {
    int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.numel();
    return n;
}

// ---------------------------------------------------------------------------
// Dynamic first convolution
// ---------------------------------------------------------------------------

// Learned affine map from a one-hot modality code to the full parameter set
// (kernels + biases) of the first convolution.
struct ModalityControllerImpl : torch::nn::Module {
    int64_t out_channels, in_channels, ksize;
    torch::nn::Linear map{nullptr};

    ModalityControllerImpl(int64_t out_ch, int64_t in_ch, int64_t k)
        : out_channels(out_ch), in_channels(in_ch), ksize(k) {
        map = register_module("map", torch::nn::Linear(kNumModalities, param_count()));
    }

    int64_t weight_count() const { return out_channels * in_channels * ksize * ksize; }
    int64_t param_count() const { return weight_count() + out_channels; }

    // code: (3,) -> {weight (out, in, k, k), bias (out,)}
    std::pair<torch::Tensor, torch::Tensor> generate(const torch::Tensor& code) {
        auto p = map->forward(code.to(map->weight.dtype()));
        auto w = p.slice(0, 0, weight_count())
                     .view({out_channels, in_channels, ksize, ksize});
        auto b = p.slice(0, weight_count(), param_count());
        return {w, b};
    }
};
TORCH_MODULE(ModalityController);

// First convolution slot of a generator. Static by default; after
// make_dynamic a controller generates its weights per modality code and the
// original static kernel goes inert.
struct StemConvImpl : torch::nn::Module {
    int64_t in_channels, out_channels, ksize, pad;
    torch::nn::Conv2d conv{nullptr};
    ModalityController controller{nullptr};
    torch::Tensor active_code;  // (3,) default code once dynamic

    StemConvImpl(int64_t in_ch, int64_t out_ch, int64_t k, int64_t pad_)
        : in_channels(in_ch), out_channels(out_ch), ksize(k), pad(pad_) {
        conv = register_module(
            "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, k).padding(pad_)));
    }

    bool dynamic() const { return !controller.is_empty(); }

    int64_t static_param_count() const {
        return conv->weight.numel() + conv->bias.numel();
    }

    void install(ModalityController c, const torch::Tensor& code) {
        if (c->out_channels != out_channels || c->in_channels != in_channels ||
            c->ksize != ksize) {
            throw ValidationError("controller geometry does not match first conv (" +
                                  std::to_string(c->param_count()) + " generated vs " +
                                  std::to_string(static_param_count()) + " static params)");
        }
        validate_one_hot(code);
        controller = register_module("controller", std::move(c));
        active_code = register_buffer("active_code", code.to(torch::kFloat32).clone());
    }

    torch::Tensor forward(const torch::Tensor& x,
                          const std::optional<torch::Tensor>& codes = std::nullopt) {
        if (!dynamic()) return conv->forward(x);

        namespace F = torch::nn::functional;
        torch::Tensor c = codes ? *codes : active_code;
        validate_one_hot(c);
        if (c.dim() == 1) {
            auto [w, b] = controller->generate(c);
            return F::conv2d(x, w, F::Conv2dFuncOptions().bias(b).padding(pad));
        }
        if (c.size(0) != x.size(0)) {
            throw ShapeError("per-sample codes must match batch size");
        }
        std::vector<torch::Tensor> outs;
        outs.reserve(x.size(0));
        for (int64_t i = 0; i < x.size(0); ++i) {
            auto [w, b] = controller->generate(c[i]);
            outs.push_back(
                F::conv2d(x.slice(0, i, i + 1), w, F::Conv2dFuncOptions().bias(b).padding(pad)));
        }
        return torch::cat(outs, 0);
    }
};
TORCH_MODULE(StemConv);

// ---------------------------------------------------------------------------
// Generator base
// ---------------------------------------------------------------------------

// Common contract of both backbones: (B, 1, H, W) in [-1,1] ->
// (B, 4, H, W) tanh-bounded, organelle channels in canonical order.
//
// forward_heads returns the four decoder outputs as separate tensors. The
// training loss consumes those directly: concatenation would route
// defined-zero gradients into every head and defined grads keep feeding
// optimizer state, so partial-label exclusion must never pass through cat.
struct GeneratorBaseImpl : torch::nn::Module {
    virtual ~GeneratorBaseImpl() = default;
    virtual std::array<torch::Tensor, kNumOrganelles> forward_heads(
        const torch::Tensor& x, const std::optional<torch::Tensor>& codes = std::nullopt) = 0;
    virtual StemConv stem() = 0;
    virtual std::string backbone_name() const = 0;
    virtual nlohmann::json arch_json() const = 0;

    // (B, 4, H, W) assembled view, for inference and shape checks.
    torch::Tensor forward(const torch::Tensor& x,
                          const std::optional<torch::Tensor>& codes = std::nullopt) {
        auto heads = forward_heads(x, codes);
        return torch::cat({heads[0], heads[1], heads[2], heads[3]}, 1);
    }

    bool is_dynamic() { return stem()->dynamic(); }
};

namespace detail {

inline void check_input(const torch::Tensor& x, int64_t in_channels, int64_t divisor,
                        const char* who) {
    if (x.dim() != 4 || x.size(1) != in_channels) {
        throw ShapeError(std::string(who) + " expects (B, " + std::to_string(in_channels) +
                         ", H, W) input");
    }
    if (x.size(2) % divisor != 0 || x.size(3) % divisor != 0) {
        throw ShapeError(std::string(who) + ": H and W must be divisible by " +
                         std::to_string(divisor) + ", got " + std::to_string(x.size(2)) +
                         "x" + std::to_string(x.size(3)));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ResNet generator (shared trunk, four decoder heads)
// ---------------------------------------------------------------------------

struct ResBlockImpl : torch::nn::Module {
    torch::nn::Sequential body{nullptr};

    explicit ResBlockImpl(int64_t ch) {
        body = register_module(
            "body",
            torch::nn::Sequential(
                torch::nn::ReflectionPad2d(1),
                torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, ch, 3)),
                torch::nn::InstanceNorm2d(ch), torch::nn::ReLU(true),
                torch::nn::ReflectionPad2d(1),
                torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, ch, 3)),
                torch::nn::InstanceNorm2d(ch)));
    }

    torch::Tensor forward(const torch::Tensor& x) { return x + body->forward(x); }
};
TORCH_MODULE(ResBlock);

struct ResnetGeneratorImpl : GeneratorBaseImpl {
    GeneratorSpec spec;
    StemConv stem_conv{nullptr};
    torch::nn::Sequential stem_rest{nullptr};   // norm + relu after the first conv
    torch::nn::Sequential encoder{nullptr};     // two stride-2 downsamplers
    torch::nn::Sequential blocks{nullptr};      // residual trunk
    torch::nn::ModuleList heads;                // four independent decoders

    explicit ResnetGeneratorImpl(const GeneratorSpec& s) : spec(s) {
        spec.validate();
        const int64_t w = spec.base_width;

        stem_conv = register_module("stem", StemConv(spec.in_channels, w, 7, 0));
        stem_rest = register_module(
            "stem_rest",
            torch::nn::Sequential(torch::nn::InstanceNorm2d(w), torch::nn::ReLU(true)));

        encoder = register_module(
            "encoder",
            torch::nn::Sequential(
                torch::nn::Conv2d(torch::nn::Conv2dOptions(w, 2 * w, 3).stride(2).padding(1)),
                torch::nn::InstanceNorm2d(2 * w), torch::nn::ReLU(true),
                torch::nn::Conv2d(
                    torch::nn::Conv2dOptions(2 * w, 4 * w, 3).stride(2).padding(1)),
                torch::nn::InstanceNorm2d(4 * w), torch::nn::ReLU(true)));

        torch::nn::Sequential trunk;
        for (int64_t i = 0; i < spec.n_resblocks; ++i) trunk->push_back(ResBlock(4 * w));
        blocks = register_module("blocks", trunk);

        heads = register_module("heads", torch::nn::ModuleList());
        for (int64_t k = 0; k < GeneratorSpec::n_heads; ++k) {
            heads->push_back(torch::nn::Sequential(
                torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(4 * w, 2 * w, 3)
                                               .stride(2)
                                               .padding(1)
                                               .output_padding(1)),
                torch::nn::InstanceNorm2d(2 * w), torch::nn::ReLU(true),
                torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(2 * w, w, 3)
                                               .stride(2)
                                               .padding(1)
                                               .output_padding(1)),
                torch::nn::InstanceNorm2d(w), torch::nn::ReLU(true),
                torch::nn::ReflectionPad2d(3),
                torch::nn::Conv2d(torch::nn::Conv2dOptions(w, 1, 7)), torch::nn::Tanh()));
        }

        apply(weights_init);
    }

    std::array<torch::Tensor, kNumOrganelles> forward_heads(
        const torch::Tensor& x,
        const std::optional<torch::Tensor>& codes = std::nullopt) override {
        namespace F = torch::nn::functional;
        detail::check_input(x, spec.in_channels, 4, "ResnetGenerator");
        auto h = F::pad(x, F::PadFuncOptions({3, 3, 3, 3}).mode(torch::kReflect));
        h = stem_conv->forward(h, codes);
        h = stem_rest->forward(h);
        h = encoder->forward(h);
        h = blocks->forward(h);
        std::array<torch::Tensor, kNumOrganelles> outs;
        for (size_t k = 0; k < outs.size(); ++k) {
            outs[k] = heads[k]->as<torch::nn::Sequential>()->forward(h);
        }
        return outs;
    }

    StemConv stem() override { return stem_conv; }
    std::string backbone_name() const override { return "pix2pix_resnet9"; }

    nlohmann::json arch_json() const override {
        return {{"backbone", backbone_name()},
                {"base_width", spec.base_width},
                {"n_resblocks", spec.n_resblocks},
                {"in_channels", spec.in_channels},
                {"dynamic", stem_conv->dynamic()}};
    }
};
TORCH_MODULE(ResnetGenerator);

inline ResnetGenerator build_generator(const GeneratorSpec& spec) {
    return ResnetGenerator(spec);
}

// ---------------------------------------------------------------------------
// UNet++ generator (nested dense skips, no adversarial partner)
// ---------------------------------------------------------------------------

struct UnetPPGeneratorImpl : GeneratorBaseImpl {
    UnetPPSpec spec;
    StemConv stem_conv{nullptr};
    torch::nn::Sequential stem_rest{nullptr};
    torch::nn::ModuleList enc;    // X(i,0) blocks for i >= 1
    torch::nn::ModuleList nodes;  // X(i,j) blocks for j >= 1, flattened
    torch::nn::ModuleList ups;    // upsamplers feeding each X(i,j), flattened
    torch::nn::ModuleList heads;
    torch::nn::MaxPool2d pool{nullptr};

    explicit UnetPPGeneratorImpl(const UnetPPSpec& s) : spec(s) {
        spec.validate();
        const int64_t w = spec.base_width;

        stem_conv = register_module("stem", StemConv(spec.in_channels, w, 3, 1));
        stem_rest = register_module(
            "stem_rest",
            torch::nn::Sequential(torch::nn::InstanceNorm2d(w), torch::nn::ReLU(true),
                                  torch::nn::Conv2d(torch::nn::Conv2dOptions(w, w, 3).padding(1)),
                                  torch::nn::InstanceNorm2d(w), torch::nn::ReLU(true)));
        pool = register_module("pool", torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(2)));

        enc = register_module("enc", torch::nn::ModuleList());
        for (int64_t i = 1; i <= spec.depth; ++i) {
            enc->push_back(conv_block(width(i - 1), width(i)));
        }

        nodes = register_module("nodes", torch::nn::ModuleList());
        ups = register_module("ups", torch::nn::ModuleList());
        for (int64_t j = 1; j <= spec.depth; ++j) {
            for (int64_t i = 0; i + j <= spec.depth; ++i) {
                ups->push_back(torch::nn::ConvTranspose2d(
                    torch::nn::ConvTranspose2dOptions(width(i + 1), width(i), 2).stride(2)));
                nodes->push_back(conv_block((j + 1) * width(i), width(i)));
            }
        }

        heads = register_module("heads", torch::nn::ModuleList());
        for (int k = 0; k < kNumOrganelles; ++k) {
            heads->push_back(torch::nn::Sequential(
                torch::nn::Conv2d(torch::nn::Conv2dOptions(w, 1, 3).padding(1)),
                torch::nn::Tanh()));
        }

        apply(weights_init);
    }

    int64_t width(int64_t level) const { return spec.base_width << level; }

    torch::nn::Sequential conv_block(int64_t in_ch, int64_t out_ch) {
        return torch::nn::Sequential(
            torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 3).padding(1)),
            torch::nn::InstanceNorm2d(out_ch), torch::nn::ReLU(true),
            torch::nn::Conv2d(torch::nn::Conv2dOptions(out_ch, out_ch, 3).padding(1)),
            torch::nn::InstanceNorm2d(out_ch), torch::nn::ReLU(true));
    }

    std::array<torch::Tensor, kNumOrganelles> forward_heads(
        const torch::Tensor& x,
        const std::optional<torch::Tensor>& codes = std::nullopt) override {
        detail::check_input(x, spec.in_channels, int64_t{1} << spec.depth, "UnetPPGenerator");
        const int64_t D = spec.depth;

        // grid[i][j] = X(i,j); column j consumes all previous columns at row i
        // plus the upsampled X(i+1, j-1).
        std::vector<std::vector<torch::Tensor>> grid(static_cast<size_t>(D + 1));
        grid[0].push_back(stem_rest->forward(stem_conv->forward(x, codes)));
        for (int64_t i = 1; i <= D; ++i) {
            grid[static_cast<size_t>(i)].push_back(
                enc[static_cast<size_t>(i - 1)]->as<torch::nn::Sequential>()->forward(
                    pool->forward(grid[static_cast<size_t>(i - 1)][0])));
        }

        size_t flat = 0;
        for (int64_t j = 1; j <= D; ++j) {
            for (int64_t i = 0; i + j <= D; ++i, ++flat) {
                auto up = ups[flat]->as<torch::nn::ConvTranspose2d>()->forward(
                    grid[static_cast<size_t>(i + 1)][static_cast<size_t>(j - 1)]);
                std::vector<torch::Tensor> cat_in = grid[static_cast<size_t>(i)];
                cat_in.push_back(up);
                grid[static_cast<size_t>(i)].push_back(
                    nodes[flat]->as<torch::nn::Sequential>()->forward(torch::cat(cat_in, 1)));
            }
        }

        std::array<torch::Tensor, kNumOrganelles> outs;
        for (size_t k = 0; k < outs.size(); ++k) {
            outs[k] = heads[k]->as<torch::nn::Sequential>()->forward(
                grid[0][static_cast<size_t>(D)]);
        }
        return outs;
    }

    StemConv stem() override { return stem_conv; }
    std::string backbone_name() const override { return "unetpp"; }

    nlohmann::json arch_json() const override {
        return {{"backbone", backbone_name()},
                {"base_width", spec.base_width},
                {"depth", spec.depth},
                {"in_channels", spec.in_channels},
                {"dynamic", stem_conv->dynamic()}};
    }
};
TORCH_MODULE(UnetPPGenerator);

inline UnetPPGenerator build_unetpp(const UnetPPSpec& spec) {
    return UnetPPGenerator(spec);
}

// ---------------------------------------------------------------------------
// PatchGAN discriminator (one instance per organelle)
// ---------------------------------------------------------------------------

// Conditioning is concatenation of the source image with the candidate
// organelle channel: input (B, 2, H, W) -> patch logit map (B, 1, h', w').
struct PatchDiscriminatorImpl : torch::nn::Module {
    DiscriminatorSpec spec;
    torch::nn::Sequential body{nullptr};

    explicit PatchDiscriminatorImpl(const DiscriminatorSpec& s) : spec(s) {
        spec.validate();
        const int64_t w = spec.base_width;
        torch::nn::Sequential seq(
            torch::nn::Conv2d(torch::nn::Conv2dOptions(2, w, 4).stride(2).padding(1)),
            torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2).inplace(true)));
        int64_t mult = 1;
        for (int64_t n = 1; n < spec.n_layers; ++n) {
            const int64_t prev = mult;
            mult = std::min<int64_t>(int64_t{1} << n, 8);
            seq->push_back(torch::nn::Conv2d(
                torch::nn::Conv2dOptions(w * prev, w * mult, 4).stride(2).padding(1)));
            seq->push_back(torch::nn::InstanceNorm2d(w * mult));
            seq->push_back(torch::nn::LeakyReLU(
                torch::nn::LeakyReLUOptions().negative_slope(0.2).inplace(true)));
        }
        const int64_t prev = mult;
        mult = std::min<int64_t>(int64_t{1} << spec.n_layers, 8);
        seq->push_back(torch::nn::Conv2d(
            torch::nn::Conv2dOptions(w * prev, w * mult, 4).stride(1).padding(1)));
        seq->push_back(torch::nn::InstanceNorm2d(w * mult));
        seq->push_back(torch::nn::LeakyReLU(
            torch::nn::LeakyReLUOptions().negative_slope(0.2).inplace(true)));
        seq->push_back(
            torch::nn::Conv2d(torch::nn::Conv2dOptions(w * mult, 1, 4).stride(1).padding(1)));
        body = register_module("body", seq);
        apply(weights_init);
    }

    torch::Tensor forward(const torch::Tensor& x) {
        if (x.dim() != 4 || x.size(1) != 2) {
            throw ShapeError("PatchDiscriminator expects (B, 2, H, W): source + candidate");
        }
        return body->forward(x);
    }
};
TORCH_MODULE(PatchDiscriminator);

inline PatchDiscriminator build_discriminator(const DiscriminatorSpec& spec) {
    return PatchDiscriminator(spec);
}

// Four organelle-specific discriminators with disjoint parameters, indexed in
// canonical channel order.
using DiscriminatorBank = std::array<PatchDiscriminator, kNumOrganelles>;

inline DiscriminatorBank build_discriminator_bank(const DiscriminatorSpec& spec) {
    return {PatchDiscriminator(spec), PatchDiscriminator(spec), PatchDiscriminator(spec),
            PatchDiscriminator(spec)};
}

// ---------------------------------------------------------------------------
// Dynamic strategy wiring
// ---------------------------------------------------------------------------

inline ModalityController make_controller(const std::shared_ptr<GeneratorBaseImpl>& gen) {
    auto stem = gen->stem();
    return ModalityController(stem->out_channels, stem->in_channels, stem->ksize);
}

// Installs the controller as the generator's first-conv parameter source and
// sets the active code. Forward passes may still override the code per batch.
inline void make_dynamic(const std::shared_ptr<GeneratorBaseImpl>& gen,
                         ModalityController controller, const torch::Tensor& code) {
    gen->stem()->install(std::move(controller), code);
}

}  // namespace silico
