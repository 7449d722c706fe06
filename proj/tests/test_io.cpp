#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "sssdr/image_io.hpp"
#include "sssdr/sssdr.hpp"

using namespace sssdr;

namespace {

std::string temp_path(const std::string& name) { return testing::TempDir() + "sssdr_io_" + name; }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST(Obj, RoundTripIsExact) {
  oracle::Rng rng(1);
  const auto mesh = heightfield_to_mesh(oracle::random_heightfield(rng, 6, 0.37, 12.3, 0.9, {1.1, -2.2}), 0.6);
  const auto path = temp_path("mesh.obj");
  write_obj(mesh, path);
  const auto back = read_obj(path, 0.6);
  EXPECT_EQ(back.vertices, mesh.vertices);
  EXPECT_EQ(back.faces, mesh.faces);
  EXPECT_EQ(back.albedo, mesh.albedo);
}

TEST(Obj, AcceptsCommonDecorations) {
  const auto path = temp_path("decorated.obj");
  write_text(path,
             "# exported\nmtllib x.mtl\no patch\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\ns off\n"
             "usemtl m\n\nf 1/1/1 2/2/1 3//1\nf -3 -2 -1\n");
  const auto mesh = read_obj(path);
  ASSERT_EQ(mesh.faces.size(), 2u);
  EXPECT_EQ(mesh.faces[1], (Face{0, 1, 2}));
}

TEST(Obj, MalformedFilesReportLines) {
  const auto path = temp_path("bad.obj");
  write_text(path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 4 3\n");
  try {
    read_obj(path);
    FAIL() << "quad accepted";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 5u);
  }
  write_text(path, "v 0 0 0\nv 1 0 0\nf 1 2 3\n");
  EXPECT_THROW(read_obj(path), ParseError);
  write_text(path, "v 0 0 0\nv 1 0 0\nv 0 1 0\n");
  EXPECT_THROW(read_obj(path), ParseError);
  write_text(path, "v 0 0 zero\n");
  EXPECT_THROW(read_obj(path), ParseError);
  write_text(path, "v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n");
  EXPECT_THROW(read_obj(path), ParseError);  // degenerate face
  EXPECT_THROW(read_obj(temp_path("missing.obj")), ConfigError);
}

TEST(HeightfieldFile, RoundTripWithinFloatPrecision) {
  oracle::Rng rng(2);
  const auto hf = oracle::random_heightfield(rng, 9, 0.5, 20.0, 2.0, {3, 4});
  const auto path = temp_path("hf.bin");
  write_heightfield(hf, path);
  EXPECT_EQ(std::filesystem::file_size(path), 24u + 4u * hf.size());
  const auto back = read_heightfield(path);
  EXPECT_EQ(back.grid(), hf.grid());
  for (std::size_t k = 0; k < hf.size(); ++k) EXPECT_EQ(back.values()[k], static_cast<double>(static_cast<float>(hf.values()[k])));
}

TEST(HeightfieldFile, RejectsForeignAndTruncatedFiles) {
  const auto path = temp_path("hf_bad.bin");
  write_text(path, "NOPE0000");
  EXPECT_THROW(read_heightfield(path), ParseError);
  write_heightfield(Heightfield(GridSpec{3, 3, 1.0, {}}, -5.0), path);
  std::filesystem::resize_file(path, 24 + 4 * 5);
  EXPECT_THROW(read_heightfield(path), ParseError);
}

TEST(HeightfieldFile, CsvHasOneRowPerNode) {
  const auto path = temp_path("hf.csv");
  write_heightfield_csv(Heightfield(GridSpec{3, 2, 1.0, {}}, -5.0), path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "i,j,x,y,z");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 6u);
}

TEST(WaterfallFile, RoundTripAndValidation) {
  Waterfall wf(3, 5);
  for (std::size_t k = 0; k < wf.data.size(); ++k) wf.data[k] = 0.25 * static_cast<double>(k);
  const auto path = temp_path("wf.bin");
  write_waterfall(wf, path, 0.1953125);
  EXPECT_EQ(std::filesystem::file_size(path), 24u + 4u * wf.data.size());
  EXPECT_EQ(read_waterfall(path), wf);

  wf.data[4] = std::numeric_limits<double>::infinity();
  write_waterfall(wf, path);
  EXPECT_THROW(read_waterfall(path), ParseError);
  write_heightfield(Heightfield(GridSpec{3, 3, 1.0, {}}, -5.0), path);
  EXPECT_THROW(read_waterfall(path), ParseError);
}

TEST(WaterfallFile, PngAndNormSidecar) {
  Waterfall wf(2, 3);
  wf.data = {0, 1, 2, 3, 4, 8, 8, 4, 2, 1, 0, 16};
  const auto path = temp_path("wf.png");
  EXPECT_EQ(write_waterfall_png(wf, path, 8.0), 8.0);
  const auto img = read_gray_png(path);
  EXPECT_EQ(img.width, 6u);
  EXPECT_EQ(img.height, 2u);
  EXPECT_EQ(img.pixels[0], 0);
  EXPECT_EQ(img.pixels[2], 64);
  EXPECT_EQ(img.pixels[5], 255);
  EXPECT_EQ(img.pixels[11], 255);  // clamped
  std::ifstream side(path + ".norm.txt");
  std::string key;
  double norm = 0.0;
  side >> key >> norm;
  EXPECT_EQ(key, "norm");
  EXPECT_EQ(norm, 8.0);
  EXPECT_EQ(write_waterfall_png(wf, path), 16.0);
}

TEST(PoseFile, RoundTripAndSideExpansion) {
  SurveySpec s = box_survey({1, 2}, 3.0, -7.0, 1.5, deg2rad(30.0));
  auto poses = make_survey_lines(s);
  poses[3].pitch = 0.01;
  poses[3].roll = -0.02;
  const auto path = temp_path("poses.csv");
  write_poses_csv(poses, path);
  const auto back = read_poses_csv(path, deg2rad(30.0));
  ASSERT_EQ(back.size(), poses.size());
  for (std::size_t k = 0; k < poses.size(); ++k) {
    EXPECT_EQ(back[k].ping_id, poses[k].ping_id);
    EXPECT_EQ(back[k].position, poses[k].position);
    EXPECT_NEAR(back[k].heading, poses[k].heading, 1e-15);
    EXPECT_NEAR(back[k].pitch, poses[k].pitch, 1e-15);
    EXPECT_NEAR(back[k].roll, poses[k].roll, 1e-15);
    EXPECT_EQ(back[k].side, poses[k].side);
  }

  write_text(path, "ping_id,x,y,z,heading_deg,pitch_deg,roll_deg\n0,1,2,-5,90,0,0\n1,1,3,-5,90,0,0\n");
  const auto two = read_poses_csv(path, 0.5);
  ASSERT_EQ(two.size(), 4u);
  EXPECT_EQ(two[0].side, Side::port);
  EXPECT_EQ(two[1].side, Side::starboard);
  EXPECT_EQ(two[3].ping_id, 1u);
  EXPECT_EQ(two[2].tilt, 0.5);
}

TEST(PoseFile, MalformedRows) {
  const auto path = temp_path("bad_poses.csv");
  write_text(path, "ping_id,x,y,z,heading_deg,pitch_deg,roll_deg,side\n0,1,2,-5,90,0,0,port\n1,1,2,-5,90,0,0,aft\n");
  try {
    read_poses_csv(path, 0.5);
    FAIL() << "bad side accepted";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  write_text(path, "ping_id,x,y,z,heading_deg,pitch_deg,roll_deg,side\n0,1,2\n");
  EXPECT_THROW(read_poses_csv(path, 0.5), ParseError);
  write_text(path, "x,y\n");
  EXPECT_THROW(read_poses_csv(path, 0.5), ParseError);
  write_text(path, "ping_id,x,y,z,heading_deg,pitch_deg,roll_deg,side\n");
  EXPECT_THROW(read_poses_csv(path, 0.5), ParseError);
}

TEST(StateFile, RoundTripAndValidation) {
  auto s = OptimState::start(Heightfield(GridSpec{3, 4, 0.5, {1, 2}}, -10.0));
  s.epoch = 2;
  s.step = 2;
  s.m[3] = 0.125;
  s.v[5] = 1e-300;
  s.history = {{1, 2, 3}, {0.5, 0.25, 0.75}, {0.1, 0.2, 0.3}};
  const auto path = temp_path("state.bin");
  save_state(s, path);
  EXPECT_EQ(load_state(path), s);
  s.history.pop_back();
  save_state(s, path);
  EXPECT_THROW(load_state(path), ParseError);
  const auto fresh = OptimState::start(s.heightfield);
  save_state(fresh, path);
  EXPECT_EQ(load_state(path), fresh);
  write_text(path, "SSHF");
  EXPECT_THROW(load_state(path), ParseError);
}
