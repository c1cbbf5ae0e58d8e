#include "tcformer/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "tcformer/errors.hpp"
#include "tcformer/rng.hpp"

namespace tcformer {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Disk {
    double x, y, r;
    double rgb[3];
    double dot_angle[2];
    double dot_r;
};

// coverage of a disk over a pixel center, with a one-pixel feather
double disk_coverage(double px, double py, double cx, double cy, double r) {
    const double d = std::hypot(px - cx, py - cy);
    return std::clamp(r - d + 0.5, 0.0, 1.0);
}

void blend(Tensor& image, Index pixel, double cov, const double rgb[3]) {
    if (cov <= 0.0) return;
    for (int c = 0; c < 3; ++c) {
        image.at(pixel, c) = (1.0 - cov) * image.at(pixel, c) + cov * rgb[c];
    }
}

void dot_position(const Disk& disk, int which, double* x, double* y) {
    const double rad = disk.r + disk.dot_r + 1.5;
    *x = disk.x + rad * std::cos(disk.dot_angle[which]);
    *y = disk.y + rad * std::sin(disk.dot_angle[which]);
}

}  // namespace

Tensor keypoint_heatmaps(const std::vector<SyntheticSample::Keypoint>& keypoints, int base_h,
                         int base_w, int cell_size, double sigma_cells) {
    Tensor target({static_cast<Index>(base_h) * base_w, SyntheticSample::kSlots});
    const double inv = 1.0 / (2.0 * sigma_cells * sigma_cells);
    for (const auto& kp : keypoints) {
        const int kx = std::clamp(static_cast<int>(kp.x) / cell_size, 0, base_w - 1);
        const int ky = std::clamp(static_cast<int>(kp.y) / cell_size, 0, base_h - 1);
        for (int cy = 0; cy < base_h; ++cy) {
            for (int cx = 0; cx < base_w; ++cx) {
                const double d2 = static_cast<double>((cx - kx) * (cx - kx)) +
                                  static_cast<double>((cy - ky) * (cy - ky));
                target.at(static_cast<Index>(cy) * base_w + cx, kp.slot) = std::exp(-d2 * inv);
            }
        }
    }
    return target;
}

std::vector<SyntheticSample> generate_dataset(uint64_t seed, int count, int resolution) {
    check_input(count >= 0, "sample count must be nonnegative");
    check_input(resolution >= 32 && resolution % 32 == 0,
                "resolution must be a positive multiple of 32");
    std::vector<SyntheticSample> samples;
    samples.reserve(static_cast<size_t>(count));

    for (int index = 0; index < count; ++index) {
        Rng rng(Rng::derive(seed, static_cast<uint64_t>(index)));
        SyntheticSample s;
        s.h = s.w = resolution;
        s.base_h = s.base_w = resolution / 4;
        s.image = Tensor({static_cast<Index>(s.h) * s.w, 3});

        // textured background: smooth value noise over a coarse lattice
        const int lattice = 8;
        std::vector<double> noise(static_cast<size_t>((lattice + 1) * (lattice + 1) * 3));
        for (auto& v : noise) v = rng.uniform(-0.06, 0.06);
        double base_rgb[3];
        for (double& v : base_rgb) v = rng.uniform(0.12, 0.32);
        for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) {
                const double fy = static_cast<double>(y) / s.h * lattice;
                const double fx = static_cast<double>(x) / s.w * lattice;
                const int iy = static_cast<int>(fy), ix = static_cast<int>(fx);
                const double ty = fy - iy, tx = fx - ix;
                for (int c = 0; c < 3; ++c) {
                    auto at = [&](int yy, int xx) {
                        return noise[static_cast<size_t>((yy * (lattice + 1) + xx) * 3 + c)];
                    };
                    const double v = (1 - ty) * ((1 - tx) * at(iy, ix) + tx * at(iy, ix + 1)) +
                                     ty * ((1 - tx) * at(iy + 1, ix) + tx * at(iy + 1, ix + 1));
                    s.image.at(static_cast<Index>(y) * s.w + x, c) =
                        std::clamp(base_rgb[c] + v + rng.uniform(-0.015, 0.015), 0.0, 1.0);
                }
            }
        }

        // place 1-3 disks with enough margin for their dots
        const int n_disks = 1 + rng.uniform_int(3);
        std::vector<Disk> disks;
        for (int d = 0; d < n_disks; ++d) {
            for (int attempt = 0; attempt < 200; ++attempt) {
                Disk disk;
                disk.r = rng.uniform(0.09, 0.14) * resolution;
                disk.dot_r = rng.uniform(1.6, 2.4);
                const double margin = disk.r + 2.0 * disk.dot_r + 4.0;
                disk.x = rng.uniform(margin, s.w - margin);
                disk.y = rng.uniform(margin, s.h - margin);
                bool ok = true;
                for (const Disk& other : disks) {
                    const double gap = disk.r + other.r + 4.0 * (disk.dot_r + other.dot_r);
                    if (std::hypot(disk.x - other.x, disk.y - other.y) < gap) ok = false;
                }
                if (!ok) continue;
                for (double& v : disk.rgb) v = rng.uniform(0.55, 0.85);
                disk.dot_angle[0] = rng.uniform(0.0, 2.0 * kPi);
                disk.dot_angle[1] =
                    std::fmod(disk.dot_angle[0] + rng.uniform(0.55 * kPi, 1.45 * kPi), 2.0 * kPi);
                if (disk.dot_angle[1] < disk.dot_angle[0]) {
                    std::swap(disk.dot_angle[0], disk.dot_angle[1]);
                }
                disks.push_back(disk);
                break;
            }
        }
        std::sort(disks.begin(), disks.end(), [](const Disk& a, const Disk& b) {
            return a.x < b.x;
        });

        for (size_t d = 0; d < disks.size(); ++d) {
            const Disk& disk = disks[d];
            const double dark[3] = {0.02, 0.02, 0.02};
            const double bright[3] = {0.98, 0.98, 0.92};
            for (int y = 0; y < s.h; ++y) {
                for (int x = 0; x < s.w; ++x) {
                    const Index pixel = static_cast<Index>(y) * s.w + x;
                    blend(s.image, pixel, disk_coverage(x + 0.5, y + 0.5, disk.x, disk.y, disk.r),
                          disk.rgb);
                    for (int which = 0; which < 2; ++which) {
                        double dx, dy;
                        dot_position(disk, which, &dx, &dy);
                        // dark ring then bright core: a small high-frequency detail
                        blend(s.image, pixel,
                              disk_coverage(x + 0.5, y + 0.5, dx, dy, disk.dot_r + 1.0), dark);
                        blend(s.image, pixel,
                              disk_coverage(x + 0.5, y + 0.5, dx, dy, disk.dot_r), bright);
                    }
                }
            }
            s.keypoints.push_back({disk.x, disk.y, static_cast<int>(3 * d)});
            for (int which = 0; which < 2; ++which) {
                double dx, dy;
                dot_position(disk, which, &dx, &dy);
                s.keypoints.push_back({dx, dy, static_cast<int>(3 * d) + 1 + which});
            }
        }

        s.target = keypoint_heatmaps(s.keypoints, s.base_h, s.base_w, 4);

        // per-cell class masks for the density diagnostics
        s.cell_class.assign(static_cast<size_t>(s.base_h) * s.base_w, CellClass::background);
        for (int cy = 0; cy < s.base_h; ++cy) {
            for (int cx = 0; cx < s.base_w; ++cx) {
                const double px = cx * 4.0 + 2.0, py = cy * 4.0 + 2.0;
                CellClass& cls = s.cell_class[static_cast<size_t>(cy) * s.base_w + cx];
                for (const Disk& disk : disks) {
                    if (std::hypot(px - disk.x, py - disk.y) < disk.r + 2.0) {
                        cls = CellClass::body;
                    }
                    for (int which = 0; which < 2; ++which) {
                        double dx, dy;
                        dot_position(disk, which, &dx, &dy);
                        if (std::hypot(px - dx, py - dy) < disk.dot_r + 3.0) {
                            cls = CellClass::detail;
                        }
                    }
                }
            }
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace tcformer
