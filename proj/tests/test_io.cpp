#include "gsopt/io_image.hpp"
#include "gsopt/io_obj.hpp"
#include "gsopt/io_ply.hpp"

#include "gsopt/io_archive.hpp"

#include "test_util.hpp"

#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using namespace gsopt;
using namespace gsopt::testutil;

namespace {

/// RAII temp file path that cleans up after the test.
struct TempPath {
    std::string path;
    explicit TempPath(std::string p) : path(std::move(p)) { std::remove(path.c_str()); }
    ~TempPath() { std::remove(path.c_str()); }
    operator const std::string&() const { return path; }
};

double f32(double v) { return double(float(v)); }

bool cloud_equals_quantized(const GaussianCloud& a, const GaussianCloud& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            if (f32(a.centers[i][k]) != b.centers[i][k]) return false;
            if (f32(a.log_scales[i][k]) != b.log_scales[i][k]) return false;
            if (f32(a.colors[i][k]) != b.colors[i][k]) return false;
        }
        for (int k = 0; k < 4; ++k) {
            if (f32(a.rotations[i][k]) != b.rotations[i][k]) return false;
        }
        if (f32(a.opacity_logits[i]) != b.opacity_logits[i]) return false;
    }
    return true;
}

TriMesh random_mesh(Rng& rng, int nv, int nf) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> vi(0, nv - 1);
    TriMesh mesh;
    for (int v = 0; v < nv; ++v) mesh.vertices.push_back(Vec3(u(rng), u(rng), u(rng)));
    for (int f = 0; f < nf; ++f) {
        // Distinct indices so the faces stay valid (no degeneracy needed here).
        int a = vi(rng), b = vi(rng), c = vi(rng);
        b = (a == b) ? (b + 1) % nv : b;
        c = (c == a || c == b) ? (std::max(a, b) + 1) % nv : c;
        mesh.faces.push_back(Eigen::Vector3i(a, b, c));
    }
    return mesh;
}

} // namespace

TEST_SUITE("io") {

TEST_CASE("gaussian ply round-trips fifty random clouds at float32") {
    Rng rng(700);
    TempPath path("io_test_cloud.ply");
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<int> nd(1, 40);
        const GaussianCloud cloud = random_cloud(rng, nd(rng));
        write_gaussian_ply(path, cloud);
        const GaussianCloud back = read_gaussian_ply(path);
        CHECK(cloud_equals_quantized(cloud, back));
    }
}

TEST_CASE("gaussian ply accepts the ascii variant") {
    TempPath path("io_test_ascii.ply");
    {
        std::ofstream out(path.path);
        out << "ply\nformat ascii 1.0\nelement vertex 2\n";
        for (const char* p : {"x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0",
                              "scale_1", "scale_2", "opacity", "f_dc_0", "f_dc_1", "f_dc_2"}) {
            out << "property float " << p << "\n";
        }
        out << "end_header\n";
        out << "0.5 0 -0.25 1 0 0 0 -2 -2 -2 0.8 0.9 0.1 0.2\n";
        out << "0 1 2 0.5 0.5 0.5 0.5 -3 -2 -1 -0.5 0 0.5 1\n";
    }
    const GaussianCloud cloud = read_gaussian_ply(path);
    REQUIRE(cloud.size() == 2);
    CHECK(cloud.centers[0].x() == 0.5);
    CHECK(cloud.centers[1].z() == 2.0);
    CHECK(cloud.rotations[1].x() == 0.5);
    CHECK(cloud.log_scales[0].y() == -2.0);
    CHECK(cloud.opacity_logits[0] == doctest::Approx(0.8));
    CHECK(cloud.colors[1].z() == 1.0);
}

TEST_CASE("truncated ply payloads raise with context") {
    Rng rng(701);
    TempPath path("io_test_trunc.ply");
    const GaussianCloud cloud = random_cloud(rng, 8);
    write_gaussian_ply(path, cloud);
    const auto full_size = std::filesystem::file_size(path.path);
    std::filesystem::resize_file(path.path, full_size - 10);
    CHECK_THROWS_AS(read_gaussian_ply(path), IoError);

    TempPath missing("io_test_missing.ply");
    CHECK_THROWS_AS(read_gaussian_ply(missing), IoError);

    TempPath garbage("io_test_garbage.ply");
    {
        std::ofstream out(garbage.path);
        out << "not a ply at all\n";
    }
    CHECK_THROWS_AS(read_gaussian_ply(garbage), IoError);
}

TEST_CASE("positions-only reader works on both layouts") {
    Rng rng(702);
    TempPath path("io_test_positions.ply");
    const GaussianCloud cloud = random_cloud(rng, 12);
    write_gaussian_ply(path, cloud);
    const std::vector<Vec3> pos = read_ply_positions(path);
    REQUIRE(pos.size() == 12);
    for (std::size_t i = 0; i < pos.size(); ++i) {
        CHECK(pos[i].x() == f32(cloud.centers[i].x()));
        CHECK(pos[i].z() == f32(cloud.centers[i].z()));
    }
}

TEST_CASE("obj round-trips fifty random meshes at float32") {
    Rng rng(703);
    TempPath path("io_test_mesh.obj");
    std::uniform_int_distribution<int> nv(3, 30);
    for (int trial = 0; trial < 50; ++trial) {
        const int v = nv(rng);
        TriMesh mesh = random_mesh(rng, v, v + 4);
        if (trial % 2 == 0) {
            std::uniform_real_distribution<double> u01(0.0, 1.0);
            for (int k = 0; k < v; ++k) mesh.colors.push_back(Vec3(u01(rng), u01(rng), u01(rng)));
        }
        write_obj(path, mesh);
        const TriMesh back = read_obj(path);
        REQUIRE(back.vertex_count() == mesh.vertex_count());
        REQUIRE(back.face_count() == mesh.face_count());
        REQUIRE(back.colors.size() == mesh.colors.size());
        for (std::size_t i = 0; i < mesh.vertex_count(); ++i) {
            for (int k = 0; k < 3; ++k) CHECK(back.vertices[i][k] == f32(mesh.vertices[i][k]));
        }
        for (std::size_t f = 0; f < mesh.face_count(); ++f) {
            CHECK(back.faces[f] == mesh.faces[f]);
        }
        for (std::size_t i = 0; i < mesh.colors.size(); ++i) {
            for (int k = 0; k < 3; ++k) CHECK(back.colors[i][k] == f32(mesh.colors[i][k]));
        }
    }
}

TEST_CASE("obj reader handles the common face corner forms") {
    TempPath path("io_test_corners.obj");
    {
        std::ofstream out(path.path);
        out << "# comment\n";
        out << "o object_name\n";
        out << "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n";
        out << "vt 0.5 0.5\nvn 0 0 1\n";
        out << "f 1 2 3\n";
        out << "f 1/1 2/1 4/1\n";
        out << "f 1//1 3//1 4//1\n";
        out << "f 2/1/1 3/1/1 4/1/1\n";
        out << "s off\n";
    }
    const TriMesh mesh = read_obj(path);
    REQUIRE(mesh.vertex_count() == 4);
    REQUIRE(mesh.face_count() == 4);
    CHECK(mesh.faces[0] == Eigen::Vector3i(0, 1, 2));
    CHECK(mesh.faces[1] == Eigen::Vector3i(0, 1, 3));
    CHECK(mesh.faces[2] == Eigen::Vector3i(0, 2, 3));
    CHECK(mesh.faces[3] == Eigen::Vector3i(1, 2, 3));
    CHECK(mesh.colors.empty());

    CHECK_THROWS_AS(read_obj("no_such_mesh_file.obj"), IoError);
}

TEST_CASE("bound ply round-trips against its mesh") {
    Rng rng(704);
    TriMesh mesh;
    mesh.vertices = {Vec3(0.3, 0.3, 0.3), Vec3(0.3, -0.3, -0.3), Vec3(-0.3, 0.3, -0.3),
                     Vec3(-0.3, -0.3, 0.3)};
    mesh.faces = {Eigen::Vector3i(0, 2, 1), Eigen::Vector3i(0, 1, 3), Eigen::Vector3i(0, 3, 2),
                  Eigen::Vector3i(1, 2, 3)};
    BindOptions opt;
    opt.per_face = 3;
    BoundGaussianCloud cloud = bind_gaussians(mesh, opt);
    std::uniform_real_distribution<double> u(-0.4, 0.4);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        cloud.rots[i] = Vec2(1.0 + u(rng), u(rng));
        cloud.log_scales_2d[i] += Vec2(u(rng), u(rng));
        cloud.thickness_logits[i] = u(rng);
        cloud.opacity_logits[i] = u(rng);
        cloud.colors[i] = Vec3(0.5 + u(rng), 0.5 + u(rng), 0.5 + u(rng));
    }

    TempPath path("io_test_bound.ply");
    write_bound_ply(path, cloud);
    const BoundGaussianCloud back = read_bound_ply(path, mesh);
    REQUIRE(back.size() == cloud.size());
    CHECK_NOTHROW(back.validate());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        CHECK(back.faces[i] == cloud.faces[i]);
        for (int k = 0; k < 3; ++k) {
            CHECK(back.barys[i][k] == f32(cloud.barys[i][k]));
            CHECK(back.colors[i][k] == f32(cloud.colors[i][k]));
        }
        CHECK(back.rots[i][0] == f32(cloud.rots[i][0]));
        CHECK(back.rots[i][1] == f32(cloud.rots[i][1]));
        CHECK(back.log_scales_2d[i][0] == f32(cloud.log_scales_2d[i][0]));
        CHECK(back.log_scales_2d[i][1] == f32(cloud.log_scales_2d[i][1]));
        CHECK(back.thickness_logits[i] == f32(cloud.thickness_logits[i]));
        CHECK(back.opacity_logits[i] == f32(cloud.opacity_logits[i]));
    }

    // A mesh with too few faces for the stored indices is rejected.
    TriMesh small;
    small.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    small.faces = {Eigen::Vector3i(0, 1, 2)};
    CHECK_THROWS_AS(read_bound_ply(path, small), ContractError);
}

TEST_CASE("png round-trips within the 8-bit quantization bound") {
    Rng rng(705);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    TempPath path("io_test_image.png");

    Image rgb(13, 17, 3);
    for (double& v : rgb.span()) v = u01(rng);
    write_png(path, rgb);
    const Image back = read_png(path);
    REQUIRE(back.height() == 13);
    REQUIRE(back.width() == 17);
    REQUIRE(back.channels() == 3);
    double worst = 0.0;
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        worst = std::max(worst, std::abs(rgb.data()[i] - back.data()[i]));
    }
    CHECK(worst <= 0.5 / 255.0 + 1e-12);

    // Out-of-range values clamp rather than wrap.
    Image hot(2, 2, 1);
    hot.at(0, 0, 0) = 2.0;
    hot.at(0, 1, 0) = -1.0;
    hot.at(1, 0, 0) = 1.0;
    hot.at(1, 1, 0) = 0.0;
    write_png(path, hot);
    const Image hb = read_png(path);
    REQUIRE(hb.channels() == 1);
    CHECK(hb.at(0, 0, 0) == 1.0);
    CHECK(hb.at(0, 1, 0) == 0.0);

    CHECK_THROWS_AS(read_png("no_such_image_file.png"), IoError);
}

TEST_CASE("pfm stores float32 exactly") {
    Rng rng(706);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    TempPath path("io_test_depth.pfm");
    for (int channels : {1, 3}) {
        Image img(9, 7, channels);
        for (double& v : img.span()) v = u(rng);
        write_pfm(path, img);
        const Image back = read_pfm(path);
        REQUIRE(back.height() == 9);
        REQUIRE(back.width() == 7);
        REQUIRE(back.channels() == channels);
        for (std::size_t i = 0; i < img.size(); ++i) {
            CHECK(back.data()[i] == f32(img.data()[i]));
        }
    }
}

TEST_CASE("tensor archive round-trips named arrays in order") {
    TempPath path("io_test_params.bin");
    TensorArchive archive;
    archive.put("alpha", {1.0, 2.5, -3.25});
    archive.put("beta", {0.125});
    archive.put("gamma", std::vector<double>(100, 0.5));
    archive.save(path);

    const TensorArchive back = TensorArchive::load(path);
    CHECK(back.names() == std::vector<std::string>{"alpha", "beta", "gamma"});
    CHECK(back.get("alpha") == std::vector<double>{1.0, 2.5, -3.25});
    CHECK(back.get("beta")[0] == 0.125);
    CHECK(back.get("gamma").size() == 100);
    CHECK(back.contains("beta"));
    CHECK(!back.contains("delta"));
    CHECK_THROWS_AS(back.get("delta"), ContractError);

    CHECK_THROWS_AS(TensorArchive::load("no_such_archive.bin"), IoError);

    // Loading into params whose sizes disagree raises.
    std::vector<double> wrong(2, 0.0), grad(2, 0.0);
    std::vector<ParamRef> refs = {{"alpha", &wrong, &grad}};
    CHECK_THROWS_AS(load_params(path, refs), ContractError);
}

} // TEST_SUITE
