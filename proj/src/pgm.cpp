#include <cctype>
#include <fstream>
#include <iterator>

#include "bonenet/data.hpp"
#include "bonenet/error.hpp"

namespace bonenet {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(const std::vector<char>& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    const char c = buf[pos];
    if (c == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos])) && buf[pos] != '#')
    tok.push_back(buf[pos++]);
  return tok;
}

std::size_t parse_dim(const std::string& tok, const std::filesystem::path& path) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos || tok.size() > 9)
    throw Error(ErrorCode::FormatError, path.string() + ": bad header field '" + tok + "'");
  return std::stoul(tok);
}

}  // namespace

Image load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  const std::string magic = next_token(buf, pos);
  if (magic != "P5") throw Error(ErrorCode::FormatError, path.string() + ": not a binary PGM (magic '" + magic + "')");
  Image img;
  img.width = parse_dim(next_token(buf, pos), path);
  img.height = parse_dim(next_token(buf, pos), path);
  const std::size_t maxval = parse_dim(next_token(buf, pos), path);
  if (maxval != 255) throw Error(ErrorCode::FormatError, path.string() + ": maxval must be 255");
  if (img.width == 0 || img.height == 0) throw Error(ErrorCode::FormatError, path.string() + ": zero dimension");
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
    throw Error(ErrorCode::FormatError, path.string() + ": missing separator after header");
  ++pos;
  const std::size_t n = img.width * img.height;
  if (buf.size() - pos < n) throw Error(ErrorCode::FormatError, path.string() + ": truncated pixel data");
  img.pixels.assign(reinterpret_cast<const std::uint8_t*>(buf.data() + pos),
                    reinterpret_cast<const std::uint8_t*>(buf.data() + pos + n));
  return img;
}

void save_pgm(const Image& image, const std::filesystem::path& path) {
  if (image.pixels.size() != image.width * image.height || image.pixels.empty())
    throw Error(ErrorCode::FormatError, "image buffer does not match its dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

}  // namespace bonenet
