#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <random>

#include <flowscene/grids.hpp>
#include <flowscene/lift.hpp>

#include "oracles.hpp"

using namespace flowscene;

TEST_CASE("uniform bin edges", "[lift]") {
    std::vector<float> e = uniform_bin_edges(4, 2.0f, 10.0f);
    REQUIRE(e.size() == 5);
    REQUIRE(e.front() == Catch::Approx(2.0));
    REQUIRE(e.back() == Catch::Approx(10.0));
    for (int i = 0; i < 4; ++i) REQUIRE(e[i + 1] - e[i] == Catch::Approx(2.0));
}

TEST_CASE("one-hot depth picks the containing bin", "[lift]") {
    std::vector<float> edges{2.0f, 4.0f, 6.0f, 8.0f};
    std::vector<float> depth{3.0f, 2.0f, 7.9f, 5.0f};  // 2x2 image
    DepthDistribution d = one_hot_depth(depth, 2, 2, edges);
    REQUIRE(d.is_distribution);
    REQUIRE(d.at(0, 0, 0) == 1.0f);  // 3.0 in [2,4)
    REQUIRE(d.at(0, 0, 1) == 1.0f);  // left edge is inclusive
    REQUIRE(d.at(2, 1, 0) == 1.0f);  // 7.9 in [6,8)
    REQUIRE(d.at(1, 1, 1) == 1.0f);
    float sum = std::accumulate(d.values.begin(), d.values.end(), 0.0f);
    REQUIRE(sum == 4.0f);

    // A depth outside [front, back) leaves its pixel unsupervised and the
    // volume is no longer a distribution.
    std::vector<float> with_gap{3.0f, 8.0f, 3.0f, 3.0f};  // 8.0 == back edge: outside
    DepthDistribution g = one_hot_depth(with_gap, 2, 2, edges);
    REQUIRE_FALSE(g.is_distribution);
    for (int b = 0; b < 3; ++b) REQUIRE(g.at(b, 0, 1) == 0.0f);
}

TEST_CASE("depth distribution validation", "[lift]") {
    std::vector<float> edges{1.0f, 2.0f, 3.0f};
    REQUIRE_THROWS_AS(DepthDistribution(3, 2, 2, edges), std::invalid_argument);  // needs 4 edges
    REQUIRE_THROWS_AS(DepthDistribution(2, 2, 2, std::vector<float>{1.0f, 2.0f, 2.0f}),
                      std::invalid_argument);
    // Distribution flag enforces per-pixel sums of one.
    std::vector<float> values(8, 0.3f);
    REQUIRE_THROWS_AS(DepthDistribution(2, 2, 2, edges, values, true), std::invalid_argument);
    std::vector<float> half(8, 0.5f);
    REQUIRE_NOTHROW(DepthDistribution(2, 2, 2, edges, half, true));
}

TEST_CASE("lift is the outer product of features and depth weights", "[lift]") {
    std::mt19937 rng(51);
    FeatureMap f = oracle::random_feature(rng, 3, 4, 5);
    std::vector<float> edges = uniform_bin_edges(4, 1.0f, 9.0f);

    // One-hot depth: the feature lands in exactly its pixel's bin.
    std::vector<float> depth(20);
    std::uniform_real_distribution<float> dist(1.0f, 8.99f);
    for (float& v : depth) v = dist(rng);
    DepthDistribution oh = one_hot_depth(depth, 4, 5, edges);
    FrustumFeatures lifted = lift(f, oh);
    for (int c = 0; c < 3; ++c)
        for (int d = 0; d < 4; ++d)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 5; ++x) {
                    float want = oh.at(d, y, x) != 0.0f ? f.at(c, y, x) : 0.0f;
                    REQUIRE(lifted.at(c, d, y, x) == want);
                }

    // Uniform depth smears the feature evenly.
    DepthDistribution uni(4, 4, 5, edges, std::vector<float>(80, 0.25f), true);
    FrustumFeatures smeared = lift(f, uni);
    for (int c = 0; c < 3; ++c)
        for (int d = 0; d < 4; ++d)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 5; ++x)
                    REQUIRE(smeared.at(c, d, y, x) == Catch::Approx(0.25 * f.at(c, y, x)));

    // General case: plain per-cell product.
    std::vector<float> w(80);
    std::uniform_real_distribution<float> wdist(0.0f, 1.0f);
    for (float& v : w) v = wdist(rng);
    DepthDistribution soft(4, 4, 5, edges, w);
    FrustumFeatures prod = lift(f, soft);
    for (int c = 0; c < 3; ++c)
        for (int d = 0; d < 4; ++d)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 5; ++x)
                    REQUIRE(prod.at(c, d, y, x) == f.at(c, y, x) * soft.at(d, y, x));

    REQUIRE_THROWS_AS(lift(FeatureMap(3, 4, 4), soft), std::invalid_argument);
}

TEST_CASE("frustum points unproject through the pinhole", "[lift]") {
    CameraModel cam;
    cam.fx = 3.0f;
    cam.fy = 3.0f;
    cam.cx = 2.0f;
    cam.cy = 2.0f;  // identity extrinsics: "ego" frame == camera frame
    std::vector<float> edges{0.5f, 1.5f, 3.5f};
    FrustumPoints pts = frustum_points(cam, 6, 6, edges);
    REQUIRE(pts.bins == 2);

    // The principal-point pixel stays on the optical axis at the bin center.
    Vec3 axis = pts.at(0, 2, 2);
    REQUIRE(axis[0] == Catch::Approx(0.0).margin(1e-6));
    REQUIRE(axis[1] == Catch::Approx(0.0).margin(1e-6));
    REQUIRE(axis[2] == Catch::Approx(1.0));

    // One focal length to the right of the principal point at depth 1: x = z.
    Vec3 right = pts.at(0, 2, 5);  // pixel x = cx + fx = 5
    REQUIRE(right[0] == Catch::Approx(1.0));
    REQUIRE(right[1] == Catch::Approx(0.0).margin(1e-6));
    REQUIRE(right[2] == Catch::Approx(1.0));
}

TEST_CASE("camera axis permutation maps optical axis to forward", "[lift]") {
    CameraModel cam;
    cam.fx = cam.fy = 4.0f;
    cam.cx = cam.cy = 1.0f;
    cam.cam_to_ego = camera_axes_to_ego();
    std::vector<float> edges{1.5f, 2.5f};
    FrustumPoints pts = frustum_points(cam, 4, 4, edges);
    Vec3 p = pts.at(0, 1, 1);  // principal point, depth 2: camera (0,0,2)
    REQUIRE(p[0] == Catch::Approx(2.0));  // X forward
    REQUIRE(p[1] == Catch::Approx(0.0).margin(1e-6));
    REQUIRE(p[2] == Catch::Approx(0.0).margin(1e-6));

    Vec3 below = pts.at(0, 3, 1);  // camera y down 2 px -> ego Z down
    REQUIRE(below[2] == Catch::Approx(-2.0 * 2.0 / 4.0));
}

TEST_CASE("frustum points reproject to their pixel", "[lift]") {
    std::mt19937 rng(52);
    std::uniform_real_distribution<float> fdist(50.0f, 200.0f);
    CameraModel cam;
    cam.fx = fdist(rng);
    cam.fy = fdist(rng);
    cam.cx = 7.3f;
    cam.cy = 5.9f;
    std::vector<float> edges = uniform_bin_edges(8, 2.0f, 40.0f);
    FrustumPoints pts = frustum_points(cam, 12, 16, edges);
    for (int d = 0; d < 8; ++d)
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 16; ++x) {
                const Vec3& p = pts.at(d, y, x);
                float px = cam.fx * p[0] / p[2] + cam.cx;
                float py = cam.fy * p[1] / p[2] + cam.cy;
                REQUIRE(px == Catch::Approx(static_cast<double>(x)).margin(1e-4));
                REQUIRE(py == Catch::Approx(static_cast<double>(y)).margin(1e-4));
                REQUIRE(p[2] == Catch::Approx(0.5 * (edges[d] + edges[d + 1])).margin(1e-5));
            }
}

TEST_CASE("camera validation rejects a skewed rotation", "[lift]") {
    CameraModel cam;
    cam.fx = cam.fy = 10.0f;
    cam.cam_to_ego.rotation = {1, 0.5f, 0, 0, 1, 0, 0, 0, 1};
    REQUIRE_THROWS_AS(frustum_points(cam, 4, 4, {1.0f, 2.0f}), std::invalid_argument);
    cam.cam_to_ego = RigidTransform{};
    cam.fx = 0.0f;
    REQUIRE_THROWS_AS(frustum_points(cam, 4, 4, {1.0f, 2.0f}), std::invalid_argument);
}

namespace {

// Random frustum geometry whose points mostly land inside the given spec.
struct PoolFixture {
    FrustumFeatures fr;
    FrustumPoints pts;
    GridSpec spec;
};

PoolFixture random_pool_case(std::mt19937& rng, int c, int d, int h, int w, GridSpec spec,
                             float span) {
    PoolFixture fx;
    fx.spec = spec;
    fx.fr = FrustumFeatures(c, d, h, w);
    std::uniform_real_distribution<float> vdist(-1.0f, 1.0f);
    for (float& v : fx.fr.values) v = vdist(rng);
    fx.pts.bins = d;
    fx.pts.height = h;
    fx.pts.width = w;
    std::uniform_real_distribution<float> pdist(-0.2f * span, 1.2f * span);
    size_t cells = fx.fr.cell_count();
    for (size_t i = 0; i < cells; ++i)
        fx.pts.points.push_back({spec.origin[0] + pdist(rng), spec.origin[1] + pdist(rng),
                                 spec.origin[2] + pdist(rng)});
    return fx;
}

}  // namespace

TEST_CASE("voxel pool scatters a single cell", "[lift]") {
    GridSpec spec{{4, 4, 4}, 0.5f, {0.0f, 0.0f, 0.0f}};
    FrustumFeatures fr(2, 1, 1, 1);
    fr.at(0, 0, 0, 0) = 3.0f;
    fr.at(1, 0, 0, 0) = -2.0f;
    FrustumPoints pts{1, 1, 1, {voxel_center(spec, 1, 2, 3)}};
    VoxelGrid g = voxel_pool(fr, pts, spec);
    REQUIRE(g.at(0, 1, 2, 3) == 3.0f);
    REQUIRE(g.at(1, 1, 2, 3) == -2.0f);
    // Everything else stays zero.
    float total = 0.0f;
    for (float v : g.data) total += std::fabs(v);
    REQUIRE(total == 5.0f);
}

TEST_CASE("voxel pool sums everything falling into one voxel", "[lift]") {
    std::mt19937 rng(53);
    GridSpec one{{1, 1, 1}, 100.0f, {-50.0f, -50.0f, -50.0f}};
    PoolFixture fx = random_pool_case(rng, 2, 3, 4, 5, one, 10.0f);
    // The fixture's sampling window pokes below the origin; pull every point
    // strictly inside the lone voxel so nothing is dropped as out of bounds.
    std::uniform_real_distribution<float> inside(-49.0f, 49.0f);
    for (auto& p : fx.pts.points) p = {inside(rng), inside(rng), inside(rng)};
    VoxelGrid g = voxel_pool(fx.fr, fx.pts, one);
    size_t cells = fx.fr.cell_count();
    for (int c = 0; c < 2; ++c) {
        double want = 0.0;
        for (size_t i = 0; i < cells; ++i) want += fx.fr.values[c * cells + i];
        REQUIRE(g.at(c, 0, 0, 0) == Catch::Approx(want).margin(1e-4));
    }
}

TEST_CASE("voxel pool matches the map-based reference", "[lift]") {
    std::mt19937 rng(54);
    GridSpec spec{{6, 5, 4}, 0.5f, {-1.0f, 0.0f, 1.0f}};
    for (int trial = 0; trial < 5; ++trial) {
        PoolFixture fx = random_pool_case(rng, 3, 4, 6, 7, spec, 3.0f);
        VoxelGrid got = voxel_pool(fx.fr, fx.pts, spec);
        VoxelGrid want = oracle::ref_voxel_pool(fx.fr, fx.pts, spec);
        for (size_t i = 0; i < got.data.size(); ++i)
            REQUIRE(got.data[i] == Catch::Approx(want.data[i]).margin(1e-4));
    }
}

TEST_CASE("voxel pool conserves in-bounds feature mass", "[lift]") {
    std::mt19937 rng(55);
    GridSpec spec{{5, 5, 5}, 0.4f, {0.0f, 0.0f, 0.0f}};
    PoolFixture fx = random_pool_case(rng, 4, 6, 8, 8, spec, 2.0f);
    VoxelGrid g = voxel_pool(fx.fr, fx.pts, spec);
    std::vector<double> want = oracle::ref_inbounds_mass(fx.fr, fx.pts, spec);
    size_t voxels = spec.voxel_count();
    for (int c = 0; c < 4; ++c) {
        double got = 0.0;
        for (size_t v = 0; v < voxels; ++v) got += g.data[c * voxels + v];
        REQUIRE(got == Catch::Approx(want[c]).margin(1e-3));
    }
}

TEST_CASE("voxel pool is invariant to cell order", "[lift]") {
    std::mt19937 rng(56);
    GridSpec spec{{3, 3, 3}, 1.0f, {0.0f, 0.0f, 0.0f}};
    PoolFixture fx = random_pool_case(rng, 2, 3, 4, 4, spec, 3.0f);
    VoxelGrid base = voxel_pool(fx.fr, fx.pts, spec);

    size_t cells = fx.fr.cell_count();
    std::vector<size_t> perm(cells);
    std::iota(perm.begin(), perm.end(), size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    PoolFixture shuffled = fx;
    for (size_t j = 0; j < cells; ++j) {
        shuffled.pts.points[j] = fx.pts.points[perm[j]];
        for (int c = 0; c < 2; ++c)
            shuffled.fr.values[c * cells + j] = fx.fr.values[c * cells + perm[j]];
    }
    VoxelGrid after = voxel_pool(shuffled.fr, shuffled.pts, spec);
    for (size_t i = 0; i < base.data.size(); ++i)
        REQUIRE(after.data[i] == Catch::Approx(base.data[i]).margin(1e-4));
}

TEST_CASE("voxel pool validates cell shapes", "[lift]") {
    GridSpec spec{{2, 2, 2}, 1.0f, {0.0f, 0.0f, 0.0f}};
    FrustumFeatures fr(1, 2, 2, 2);
    FrustumPoints pts{2, 2, 3, std::vector<Vec3>(12, Vec3{0, 0, 0})};
    REQUIRE_THROWS_AS(voxel_pool(fr, pts, spec), std::invalid_argument);
}

TEST_CASE("lifted occlusion mask stays within [0, 1]", "[lift]") {
    std::mt19937 rng(57);
    CameraModel cam;
    cam.fx = cam.fy = 8.0f;
    cam.cx = cam.cy = 3.5f;
    cam.cam_to_ego = camera_axes_to_ego();
    std::vector<float> edges = uniform_bin_edges(6, 1.0f, 7.0f);
    GridSpec spec{{10, 10, 10}, 0.8f, {0.0f, -4.0f, -4.0f}};
    FrustumPoints pts = frustum_points(cam, 8, 8, edges);

    std::vector<float> depth(64);
    std::uniform_real_distribution<float> ddist(1.0f, 6.99f);
    for (float& v : depth) v = ddist(rng);
    DepthDistribution oh = one_hot_depth(depth, 8, 8, edges);

    // Clear mask lifts to an all-zero volume.
    VoxelGrid zero = lift_mask(OcclusionMask(8, 8), oh, pts, spec);
    for (float v : zero.data) REQUIRE(v == 0.0f);

    // Fully occluded mask: every voxel value is 0 or exactly 1 after clamping.
    VoxelGrid one = lift_mask(OcclusionMask(8, 8, 1.0f), oh, pts, spec);
    int touched = 0;
    for (float v : one.data) {
        REQUIRE((v == 0.0f || v == 1.0f));
        touched += v == 1.0f;
    }
    REQUIRE(touched > 0);

    // Random mask: clamp(ref pool of the lifted mask plane).
    OcclusionMask m = oracle::random_mask(rng, 8, 8, 0.5);
    VoxelGrid got = lift_mask(m, oh, pts, spec);
    FeatureMap plane(1, 8, 8, m.values);
    VoxelGrid want = oracle::ref_voxel_pool(lift(plane, oh), pts, spec);
    for (size_t i = 0; i < got.data.size(); ++i) {
        REQUIRE(got.data[i] >= 0.0f);
        REQUIRE(got.data[i] <= 1.0f);
        float clamped = std::clamp(want.data[i], 0.0f, 1.0f);
        REQUIRE(got.data[i] == Catch::Approx(clamped).margin(1e-5));
    }

    REQUIRE_THROWS_AS(lift_mask(OcclusionMask(7, 8), oh, pts, spec), std::invalid_argument);
}
