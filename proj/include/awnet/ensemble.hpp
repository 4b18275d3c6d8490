// Test-time self-ensembling over the 8 dihedral variants, two-branch fusion,
// and the evaluation harness.
//
// Variants are rot{0,90,180,270} x {no flip, hflip}, the full dihedral group
// of the square; each has an exact inverse and all spatial moves are pure
// permutations, so transform-then-invert is bit-exact.
//
// Packed Bayer inputs additionally permute their channel planes so each
// plane keeps its color: rotations by 90/270 and single flips exchange the
// two green planes (their diagonal sites swap roles); 180 degrees and
// flip-of-odd-rotation leave labels alone. The table, indexed by variant:
//   swap greens iff (quarter_turns + flip) is odd.
#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "awnet/data.hpp"
#include "awnet/loss.hpp"
#include "awnet/network.hpp"

namespace awnet {

struct DihedralTransform {
    int quarter_turns = 0;  // counter-clockwise, 0..3
    bool flip = false;      // horizontal flip applied after rotation
};

inline constexpr std::array<DihedralTransform, 8> kDihedralVariants{{
    {0, false}, {1, false}, {2, false}, {3, false},
    {0, true}, {1, true}, {2, true}, {3, true},
}};

namespace detail_d4 {

template <typename T>
Tensor<T> rot90_ccw(const Tensor<T>& x) {
    const auto d = detail::dims4(x, "rot90");
    auto v = x.data();
    std::vector<T> out(v.size());
    const std::size_t OH = d.w, OW = d.h;
    for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
        const T* src = v.data() + nc * d.h * d.w;
        T* dst = out.data() + nc * OH * OW;
        for (std::size_t i = 0; i < OH; ++i)
            for (std::size_t j = 0; j < OW; ++j) dst[i * OW + j] = src[j * d.w + (d.w - 1 - i)];
    }
    return detail::make_tensor({d.n, d.c, OH, OW}, std::move(out));
}

template <typename T>
Tensor<T> hflip(const Tensor<T>& x) {
    const auto d = detail::dims4(x, "hflip");
    auto v = x.data();
    std::vector<T> out(v.size());
    for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
        const T* src = v.data() + nc * d.h * d.w;
        T* dst = out.data() + nc * d.h * d.w;
        for (std::size_t i = 0; i < d.h; ++i)
            for (std::size_t j = 0; j < d.w; ++j) dst[i * d.w + j] = src[i * d.w + d.w - 1 - j];
    }
    return detail::make_tensor(x.shape(), std::move(out));
}

template <typename T>
Tensor<T> swap_green_planes(const Tensor<T>& raw) {
    const auto d = detail::dims4(raw, "swap_green_planes");
    if (d.c != 4) shape_error("swap_green_planes: expected 4 channels");
    std::vector<T> out(raw.data().begin(), raw.data().end());
    const std::size_t hw = d.h * d.w;
    for (std::size_t n = 0; n < d.n; ++n)
        std::swap_ranges(out.begin() + (n * 4 + 1) * hw, out.begin() + (n * 4 + 2) * hw,
                         out.begin() + (n * 4 + 3) * hw);
    return detail::make_tensor(raw.shape(), std::move(out));
}

}  // namespace detail_d4

template <typename T>
Tensor<T> dihedral_apply(const Tensor<T>& x, DihedralTransform t) {
    Tensor<T> y = x;
    for (int k = 0; k < (t.quarter_turns % 4 + 4) % 4; ++k) y = detail_d4::rot90_ccw(y);
    if (t.flip) y = detail_d4::hflip(y);
    return y;
}

template <typename T>
Tensor<T> dihedral_invert(const Tensor<T>& x, DihedralTransform t) {
    Tensor<T> y = x;
    if (t.flip) y = detail_d4::hflip(y);
    for (int k = 0; k < (4 - t.quarter_turns % 4) % 4; ++k) y = detail_d4::rot90_ccw(y);
    return y;
}

inline bool dihedral_swaps_greens(DihedralTransform t) {
    return ((t.quarter_turns % 2) + (t.flip ? 1 : 0)) % 2 == 1;
}

// Variant application for packed Bayer inputs: spatial move + green-plane
// relabeling per the table above.
template <typename T>
Tensor<T> dihedral_apply_raw(const Tensor<T>& raw, DihedralTransform t) {
    Tensor<T> y = dihedral_apply(raw, t);
    return dihedral_swaps_greens(t) ? detail_d4::swap_green_planes(y) : y;
}

template <typename T>
Tensor<T> dihedral_invert_raw(const Tensor<T>& raw, DihedralTransform t) {
    Tensor<T> y = dihedral_swaps_greens(t) ? detail_d4::swap_green_planes(raw) : raw;
    return dihedral_invert(y, t);
}

// Runs the model on all 8 variants of the input, inverts each prediction and
// averages in fixed variant order. The mean is a pairwise tree reduction, so
// eight identical predictions average back to themselves bit-exactly.
template <typename T>
Tensor<T> self_ensemble(const AwNet<T>& model, const Tensor<T>& input) {
    NoGradGuard guard;
    const bool raw = model.config().branch == Branch::raw;
    std::vector<Tensor<T>> aligned;
    for (const auto& variant : kDihedralVariants) {
        Tensor<T> in = raw ? dihedral_apply_raw(input, variant)
                           : dihedral_apply(input, variant);
        aligned.push_back(dihedral_invert(model.predict(in), variant));
    }
    while (aligned.size() > 1) {
        std::vector<Tensor<T>> next;
        for (std::size_t i = 0; i + 1 < aligned.size(); i += 2)
            next.push_back(add(aligned[i], aligned[i + 1]));
        aligned = std::move(next);
    }
    return scalar_mul(aligned.front(), T(1) / T(8));
}

namespace detail_d4 {

template <typename T>
Tensor<T> add_batch(const Tensor<T>& chw) {
    if (chw.dim() != 3) shape_error("add_batch: expected CHW tensor");
    return detail::make_tensor({1, chw.extent(0), chw.extent(1), chw.extent(2)},
                               std::vector<T>(chw.data().begin(), chw.data().end()));
}

template <typename T>
Tensor<T> drop_batch(const Tensor<T>& nchw) {
    const auto d = detail::dims4(nchw, "drop_batch");
    if (d.n != 1) shape_error("drop_batch: batch must be 1");
    return detail::make_tensor({d.c, d.h, d.w},
                               std::vector<T>(nchw.data().begin(), nchw.data().end()));
}

}  // namespace detail_d4

// Final prediction for one sample: run one or both branches (optionally
// self-ensembled), average the branch outputs, clamp to [0, 1]. The raw
// branch output doubles the packed extents, matching the demosaiced branch's
// full-resolution output.
template <typename T>
Tensor<T> fuse_models(const AwNet<T>* raw_model, const AwNet<T>* demosaiced_model,
                      const SamplePair<T>& pair, bool ensemble) {
    NoGradGuard guard;
    if (!raw_model && !demosaiced_model)
        shape_error("fuse_models: at least one branch model is required");
    std::optional<Tensor<T>> raw_pred, dem_pred;
    if (raw_model) {
        auto in = detail_d4::add_batch(pair.raw4);
        raw_pred = ensemble ? self_ensemble(*raw_model, in) : raw_model->predict(in);
    }
    if (demosaiced_model) {
        auto in = detail_d4::add_batch(pair.demosaiced3);
        dem_pred =
            ensemble ? self_ensemble(*demosaiced_model, in) : demosaiced_model->predict(in);
    }
    Tensor<T> fused;
    if (raw_pred && dem_pred) {
        if (raw_pred->shape() != dem_pred->shape())
            shape_error("fuse_models: branch outputs disagree: " +
                        shape_str(raw_pred->shape()) + " vs " + shape_str(dem_pred->shape()));
        fused = average_predictions(*raw_pred, *dem_pred);
    } else {
        fused = raw_pred ? *raw_pred : *dem_pred;
    }
    return detail_d4::drop_batch(clamp01(fused));
}

struct EvalRow {
    std::string id;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;  // sorted by id
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    std::string provenance;
};

// Per-image and mean PSNR/SSIM of (optionally ensembled, optionally fused)
// predictions against the dataset targets. Metrics come from the loss
// module's psnr/ssim on the same tensors.
template <typename T>
EvalReport evaluate(const AwNet<T>* raw_model, const AwNet<T>* demosaiced_model,
                    const std::vector<SamplePair<T>>& dataset, bool ensemble) {
    if (dataset.empty()) shape_error("evaluate: empty dataset");
    NoGradGuard guard;
    EvalReport report;
    report.provenance = std::string(raw_model ? "raw" : "") +
                        (raw_model && demosaiced_model ? "+" : "") +
                        (demosaiced_model ? "demosaiced" : "") +
                        (ensemble ? ",self-ensemble" : "");
    for (const auto& pair : dataset) {
        Tensor<T> pred = fuse_models(raw_model, demosaiced_model, pair, ensemble);
        EvalRow row;
        row.id = pair.id;
        auto pred_b = detail_d4::add_batch(pred);
        auto tgt_b = detail_d4::add_batch(pair.target3);
        row.psnr_db = psnr(pred_b, tgt_b);
        row.ssim = static_cast<double>(ssim(pred_b, tgt_b).item());
        report.rows.push_back(std::move(row));
    }
    std::sort(report.rows.begin(), report.rows.end(),
              [](const EvalRow& a, const EvalRow& b) { return a.id < b.id; });
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (const auto& row : report.rows) {
        psnr_sum += row.psnr_db;
        ssim_sum += row.ssim;
    }
    report.mean_psnr = psnr_sum / static_cast<double>(report.rows.size());
    report.mean_ssim = ssim_sum / static_cast<double>(report.rows.size());
    return report;
}

// CSV rows `id,psnr_db,ssim` with a trailing `mean,...` row.
inline std::string eval_report_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "id,psnr_db,ssim\n";
    auto num = [](double v) {
        std::ostringstream s;
        if (std::isinf(v))
            s << (v > 0 ? "inf" : "-inf");
        else {
            s.precision(6);
            s << std::fixed << v;
        }
        return s.str();
    };
    for (const auto& row : report.rows)
        os << row.id << ',' << num(row.psnr_db) << ',' << num(row.ssim) << '\n';
    os << "mean," << num(report.mean_psnr) << ',' << num(report.mean_ssim) << '\n';
    return os.str();
}

inline void write_eval_report(const std::string& path, const EvalReport& report) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io::SerializationError("write_eval_report: cannot open " + path);
    os << eval_report_csv(report);
}

}  // namespace awnet
