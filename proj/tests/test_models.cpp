
#include <torch/torch.h>

#include "silico/models.hpp"
#include <catch2/catch_amalgamated.hpp>

using namespace silico;

namespace {

GeneratorSpec tiny_gen() {
    GeneratorSpec s;
    s.base_width = 8;
    s.n_resblocks = 2;
    return s;
}

DiscriminatorSpec tiny_disc() {
    DiscriminatorSpec s;
    s.base_width = 8;
    return s;
}

UnetPPSpec tiny_unetpp() {
    UnetPPSpec s;
    s.depth = 2;
    s.base_width = 8;
    return s;
}

}  // namespace

TEST_CASE("generator forward: (B,1,H,W) -> (B,4,H,W), strictly inside (-1,1)") {
    torch::manual_seed(1);
    auto gen = build_generator(tiny_gen());
    auto x = torch::rand({2, 1, 64, 64}) * 2 - 1;
    auto y = gen->forward(x);
    REQUIRE(y.sizes() == torch::IntArrayRef({2, 4, 64, 64}));
    CHECK(y.max().item<float>() < 1.0f);
    CHECK(y.min().item<float>() > -1.0f);
}

TEST_CASE("generator rejects dims not divisible by 4") {
    torch::manual_seed(1);
    auto gen = build_generator(tiny_gen());
    CHECK_THROWS_AS(gen->forward(torch::zeros({1, 1, 66, 64})), ShapeError);
    CHECK_THROWS_AS(gen->forward(torch::zeros({1, 1, 64, 30})), ShapeError);
    CHECK_THROWS_AS(gen->forward(torch::zeros({1, 3, 64, 64})), ShapeError);
}

TEST_CASE("perturbing head k changes only output channel k") {
    torch::manual_seed(2);
    auto gen = build_generator(tiny_gen());
    gen->eval();
    auto x = torch::rand({1, 1, 32, 32}) * 2 - 1;
    torch::NoGradGuard ng;
    auto base = gen->forward(x).clone();

    for (int k = 0; k < kNumOrganelles; ++k) {
        auto head = gen->heads[static_cast<size_t>(k)]->as<torch::nn::Sequential>();
        auto params = head->parameters();
        REQUIRE_FALSE(params.empty());
        auto& w = params.front();
        auto saved = w.clone();
        w.add_(0.5);
        auto out = gen->forward(x);
        for (int j = 0; j < kNumOrganelles; ++j) {
            auto diff = (out.select(1, j) - base.select(1, j)).abs().max().item<float>();
            if (j == k) {
                CHECK(diff > 0.0f);
            } else {
                CHECK(diff == 0.0f);
            }
        }
        w.copy_(saved);  // bit-exact restore
    }
}

TEST_CASE("head exclusivity: loss on one head leaves other heads without gradient") {
    torch::manual_seed(3);
    auto gen = build_generator(tiny_gen());
    auto x = torch::rand({1, 1, 32, 32});
    auto outs = gen->forward_heads(x);
    auto loss = outs[2].abs().mean();  // tubulin head only
    loss.backward();

    for (int k = 0; k < kNumOrganelles; ++k) {
        auto head = gen->heads[static_cast<size_t>(k)]->as<torch::nn::Sequential>();
        for (const auto& p : head->parameters()) {
            if (k == 2) {
                REQUIRE(p.grad().defined());
                CHECK(p.grad().abs().sum().item<double>() > 0.0);
            } else {
                CHECK_FALSE(p.grad().defined());
            }
        }
    }
    // shared trunk does receive gradient
    CHECK(gen->stem_conv->conv->weight.grad().defined());
}

TEST_CASE("assembled forward equals the concatenated per-head outputs") {
    torch::manual_seed(30);
    auto gen = build_generator(tiny_gen());
    torch::NoGradGuard ng;
    auto x = torch::rand({2, 1, 32, 32});
    auto whole = gen->forward(x);
    auto parts = gen->forward_heads(x);
    for (int k = 0; k < kNumOrganelles; ++k) {
        CHECK(torch::equal(whole.select(1, k).unsqueeze(1), parts[static_cast<size_t>(k)]));
    }
}

TEST_CASE("generator construction is deterministic under a fixed seed") {
    torch::manual_seed(77);
    auto g1 = build_generator(tiny_gen());
    torch::manual_seed(77);
    auto g2 = build_generator(tiny_gen());
    auto p1 = g1->parameters();
    auto p2 = g2->parameters();
    REQUIRE(p1.size() == p2.size());
    for (size_t i = 0; i < p1.size(); ++i) CHECK(torch::equal(p1[i], p2[i]));
}

TEST_CASE("patchgan: 64x64 input with 3 layers yields a 6x6 logit map") {
    torch::manual_seed(4);
    auto d = build_discriminator(tiny_disc());
    auto out = d->forward(torch::rand({1, 2, 64, 64}));
    CHECK(out.sizes() == torch::IntArrayRef({1, 1, 6, 6}));
    CHECK(out.size(2) * out.size(3) > 1);  // a map, not a scalar
}

TEST_CASE("patchgan rejects non-2-channel input") {
    torch::manual_seed(4);
    auto d = build_discriminator(tiny_disc());
    CHECK_THROWS_AS(d->forward(torch::rand({1, 3, 64, 64})), ShapeError);
}

TEST_CASE("discriminator bank members have disjoint parameter sets") {
    torch::manual_seed(5);
    auto bank = build_discriminator_bank(tiny_disc());
    // disjoint storage: updating one leaves the others bit-identical
    auto w0 = bank[0]->parameters().front();
    auto w1_before = bank[1]->parameters().front().clone();
    {
        torch::NoGradGuard ng;
        w0.add_(1.0);
    }
    CHECK(torch::equal(bank[1]->parameters().front(), w1_before));
    for (int i = 0; i < kNumOrganelles; ++i) {
        for (int j = i + 1; j < kNumOrganelles; ++j) {
            for (const auto& pi : bank[static_cast<size_t>(i)]->parameters()) {
                for (const auto& pj : bank[static_cast<size_t>(j)]->parameters()) {
                    CHECK(pi.data_ptr() != pj.data_ptr());
                }
            }
        }
    }
}

TEST_CASE("unetpp forward: shape contract and tanh bound at depth 2") {
    torch::manual_seed(6);
    auto gen = build_unetpp(tiny_unetpp());
    auto y = gen->forward(torch::rand({1, 1, 64, 64}) * 2 - 1);
    REQUIRE(y.sizes() == torch::IntArrayRef({1, 4, 64, 64}));
    CHECK(y.max().item<float>() < 1.0f);
    CHECK(y.min().item<float>() > -1.0f);
}

TEST_CASE("unetpp rejects dims not divisible by 2^depth") {
    torch::manual_seed(6);
    UnetPPSpec s = tiny_unetpp();
    s.depth = 3;
    auto gen = build_unetpp(s);
    CHECK_THROWS_AS(gen->forward(torch::zeros({1, 1, 68, 64})), ShapeError);
    CHECK_NOTHROW(gen->forward(torch::zeros({1, 1, 64, 64})));
}

namespace {

// Plain U-Net of matching depth/width for the parameter-count comparison:
// same conv blocks, same upsamplers, but only the plain skip (j = 0 column).
struct PlainUnetImpl : torch::nn::Module {
    torch::nn::ModuleList enc, dec, ups;
    torch::nn::Sequential stem{nullptr};
    torch::nn::MaxPool2d pool{nullptr};
    torch::nn::Conv2d out{nullptr};
    int64_t depth;

    PlainUnetImpl(int64_t d, int64_t w) : depth(d) {
        auto block = [&](int64_t in, int64_t o) {
            return torch::nn::Sequential(
                torch::nn::Conv2d(torch::nn::Conv2dOptions(in, o, 3).padding(1)),
                torch::nn::InstanceNorm2d(o), torch::nn::ReLU(true),
                torch::nn::Conv2d(torch::nn::Conv2dOptions(o, o, 3).padding(1)),
                torch::nn::InstanceNorm2d(o), torch::nn::ReLU(true));
        };
        stem = register_module("stem", block(1, w));
        pool = register_module("pool", torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(2)));
        enc = register_module("enc", torch::nn::ModuleList());
        dec = register_module("dec", torch::nn::ModuleList());
        ups = register_module("ups", torch::nn::ModuleList());
        for (int64_t i = 1; i <= d; ++i) enc->push_back(block(w << (i - 1), w << i));
        for (int64_t i = 0; i < d; ++i) {
            ups->push_back(torch::nn::ConvTranspose2d(
                torch::nn::ConvTranspose2dOptions(w << (i + 1), w << i, 2).stride(2)));
            dec->push_back(block(2 * (w << i), w << i));
        }
        out = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(w, 4, 3).padding(1)));
    }
};

}  // namespace

TEST_CASE("unetpp has strictly more parameters than a plain U-Net of equal depth/width") {
    torch::manual_seed(7);
    auto nested = build_unetpp(tiny_unetpp());
    PlainUnetImpl plain(tiny_unetpp().depth, tiny_unetpp().base_width);
    const auto n_nested = count_parameters(*nested);
    const auto n_plain = count_parameters(plain);
    INFO("nested=" << n_nested << " plain=" << n_plain);
    CHECK(n_nested > n_plain);
}

TEST_CASE("modality codes are one-hot in (BF, PC, DIC) order") {
    auto bf = modality_code(Modality::BF);
    CHECK(bf[0].item<float>() == 1.0f);
    CHECK(bf.sum().item<float>() == 1.0f);
    validate_one_hot(bf);
    validate_one_hot(modality_codes({Modality::DIC, Modality::PC}));
    CHECK_THROWS_AS(validate_one_hot(torch::tensor({0.5f, 0.5f, 0.0f})), ValidationError);
    CHECK_THROWS_AS(validate_one_hot(torch::tensor({1.0f, 1.0f, 0.0f})), ValidationError);
    CHECK_THROWS_AS(validate_one_hot(torch::zeros({3})), ValidationError);
}

TEST_CASE("make_dynamic: different codes produce different first-layer outputs") {
    torch::manual_seed(8);
    auto gen = build_generator(tiny_gen());
    auto controller = make_controller(gen.ptr());
    make_dynamic(gen.ptr(), controller, modality_code(Modality::BF));
    REQUIRE(gen->is_dynamic());

    auto x = torch::rand({1, 1, 32, 32});
    torch::NoGradGuard ng;
    auto y_bf = gen->forward(x, modality_code(Modality::BF));
    auto y_dic = gen->forward(x, modality_code(Modality::DIC));
    CHECK((y_bf - y_dic).abs().max().item<float>() > 0.0f);

    // stored default code drives forward when no code is passed
    auto y_default = gen->forward(x);
    CHECK(torch::equal(y_default, y_bf));
}

TEST_CASE("make_dynamic rejects a non-one-hot code and mismatched controllers") {
    torch::manual_seed(9);
    auto gen = build_generator(tiny_gen());
    auto controller = make_controller(gen.ptr());
    CHECK_THROWS_AS(make_dynamic(gen.ptr(), controller, torch::tensor({0.3f, 0.3f, 0.4f})),
                    ValidationError);

    auto wrong = ModalityController(3, 2, 5);
    CHECK_THROWS_AS(make_dynamic(gen.ptr(), wrong, modality_code(Modality::BF)),
                    ValidationError);
}

TEST_CASE("controller emitting identical parameters for all codes collapses the outputs") {
    torch::manual_seed(10);
    auto gen = build_generator(tiny_gen());
    auto controller = make_controller(gen.ptr());
    {
        torch::NoGradGuard ng;
        controller->map->weight.zero_();  // output = bias for every code
    }
    make_dynamic(gen.ptr(), controller, modality_code(Modality::BF));
    auto x = torch::rand({1, 1, 32, 32});
    torch::NoGradGuard ng;
    auto y1 = gen->forward(x, modality_code(Modality::BF));
    auto y2 = gen->forward(x, modality_code(Modality::DIC));
    CHECK(torch::equal(y1, y2));
}

TEST_CASE("per-sample codes: batch mixing modalities matches per-sample forwards") {
    torch::manual_seed(11);
    auto gen = build_generator(tiny_gen());
    make_dynamic(gen.ptr(), make_controller(gen.ptr()), modality_code(Modality::BF));
    gen->eval();
    torch::NoGradGuard ng;
    auto x = torch::rand({2, 1, 32, 32});
    auto codes = modality_codes({Modality::PC, Modality::DIC});
    auto joint = gen->forward(x, codes);
    auto a = gen->forward(x.slice(0, 0, 1), modality_code(Modality::PC));
    auto b = gen->forward(x.slice(0, 1, 2), modality_code(Modality::DIC));
    // batch-vs-single conv kernels differ at float epsilon scale
    CHECK(torch::allclose(joint.slice(0, 0, 1), a, 1e-4, 1e-5));
    CHECK(torch::allclose(joint.slice(0, 1, 2), b, 1e-4, 1e-5));
}

TEST_CASE("gradients flow into the controller, not a free first conv") {
    torch::manual_seed(12);
    auto gen = build_generator(tiny_gen());
    make_dynamic(gen.ptr(), make_controller(gen.ptr()), modality_code(Modality::PC));
    auto x = torch::rand({1, 1, 32, 32});
    auto loss = gen->forward(x).abs().mean();
    loss.backward();
    CHECK(gen->stem_conv->controller->map->weight.grad().defined());
    CHECK(gen->stem_conv->controller->map->weight.grad().abs().sum().item<double>() > 0.0);
    // the inert static kernel receives no gradient once the stem is dynamic
    CHECK_FALSE(gen->stem_conv->conv->weight.grad().defined());
}

TEST_CASE("finite-difference gradient of the controller matches autodiff within 1e-4") {
    torch::manual_seed(13);
    auto gen = build_generator(tiny_gen());
    make_dynamic(gen.ptr(), make_controller(gen.ptr()), modality_code(Modality::DIC));
    gen->to(torch::kFloat64);
    gen->eval();  // instance norm has no train/eval difference; habit only

    auto x = torch::rand({1, 1, 16, 16}, torch::kFloat64);
    auto target = torch::rand({1, 4, 16, 16}, torch::kFloat64);
    auto loss_fn = [&]() { return (gen->forward(x) - target).pow(2).mean(); };

    auto loss = loss_fn();
    gen->zero_grad();
    loss.backward();
    auto w = gen->stem_conv->controller->map->weight;
    auto analytic = w.grad().clone();

    Rng rng(321);
    const double h = 1e-6;
    for (int probe = 0; probe < 6; ++probe) {
        const auto r = static_cast<int64_t>(uniform_below(rng, static_cast<uint64_t>(w.size(0))));
        const auto c = static_cast<int64_t>(uniform_below(rng, static_cast<uint64_t>(w.size(1))));
        double saved = w[r][c].item<double>();
        {
            torch::NoGradGuard ng;
            w[r][c] = saved + h;
        }
        const double up = loss_fn().item<double>();
        {
            torch::NoGradGuard ng;
            w[r][c] = saved - h;
        }
        const double down = loss_fn().item<double>();
        {
            torch::NoGradGuard ng;
            w[r][c] = saved;
        }
        const double fd = (up - down) / (2 * h);
        const double ad = analytic[r][c].item<double>();
        const double rel = std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-12});
        INFO("probe " << probe << ": fd=" << fd << " ad=" << ad << " rel=" << rel);
        CHECK(rel < 1e-4);
    }
}

TEST_CASE("unetpp generator also accepts a dynamic stem") {
    torch::manual_seed(14);
    auto gen = build_unetpp(tiny_unetpp());
    make_dynamic(gen.ptr(), make_controller(gen.ptr()), modality_code(Modality::BF));
    torch::NoGradGuard ng;
    auto x = torch::rand({1, 1, 32, 32});
    auto y1 = gen->forward(x, modality_code(Modality::BF));
    auto y2 = gen->forward(x, modality_code(Modality::PC));
    CHECK(y1.sizes() == torch::IntArrayRef({1, 4, 32, 32}));
    CHECK((y1 - y2).abs().max().item<float>() > 0.0f);
}
