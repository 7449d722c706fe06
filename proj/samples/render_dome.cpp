// Renders the dome scene along a box survey and writes the waterfall as PNG.

#include <cstdio>

#include "sssdr/image_io.hpp"
#include "sssdr/sssdr.hpp"

int main(int argc, char** argv) {
  using namespace sssdr;
  const char* out = argc > 1 ? argv[1] : "dome_waterfall.png";

  const Heightfield truth = make_dome_scene(5.0, 20.0, GridSpec::centered(40.0, 0.5, {0.0, 0.0}));
  const TriangleMesh mesh = heightfield_to_mesh(truth);
  const auto poses = make_survey_lines(box_survey({0.0, 0.0}, 15.0, -10.0, 0.5, deg2rad(30.0)));

  const auto intr = intrinsics_from_fov(deg2rad(1.0), deg2rad(50.0), 50.0, 256);
  const Waterfall wf = render_waterfall(mesh, poses, intr, BeamPattern{}, RenderParams{});

  const double norm = write_waterfall_png(wf, out);
  std::printf("%zu pings x %zu columns -> %s (norm %.4g)\n", wf.rows, wf.cols(), out, norm);
}
