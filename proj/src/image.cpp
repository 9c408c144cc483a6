#include "efe/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>
#include <string>

namespace efe {

void write_pgm_with_scale(const std::filesystem::path& path, const std::vector<double>& grid,
                          std::size_t height, std::size_t width) {
    if (grid.size() != height * width || grid.empty()) {
        throw std::invalid_argument("write_pgm_with_scale: grid holds " + std::to_string(grid.size()) +
                                    " values, expected " + std::to_string(height * width));
    }
    const auto [lo_it, hi_it] = std::minmax_element(grid.begin(), grid.end());
    const double lo = *lo_it, hi = *hi_it;
    const double span = hi > lo ? hi - lo : 1.0;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << "P5\n" << width << ' ' << height << "\n255\n";
    for (double v : grid) {
        const double t = std::clamp((v - lo) / span, 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t))));
    }
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");

    std::filesystem::path side = path;
    side += ".txt";
    std::ofstream meta(side, std::ios::trunc);
    if (!meta) throw std::runtime_error("cannot open '" + side.string() + "' for writing");
    meta << std::setprecision(17) << "min " << lo << "\nmax " << hi << '\n';
}

}  // namespace efe
