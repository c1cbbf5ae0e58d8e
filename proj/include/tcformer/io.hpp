#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tcformer/model.hpp"

namespace tcformer::io {

// --- CSV (UTF-8, header row) --------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
// Throws InvalidInputError naming the offending line on malformed content,
// MissingArtifactError when the file does not exist.
CsvTable read_csv(const std::string& path);

// --- PNG (8-bit RGB) ------------------------------------------------------------

struct Image8 {
    int w = 0, h = 0;
    std::vector<uint8_t> rgb;  // 3 bytes per pixel, row-major
};

void write_png(const std::string& path, const Image8& image);
Image8 read_png(const std::string& path);  // 8-bit RGB/RGBA, non-interlaced

// Minimal line plot of a series (e.g. a loss curve) on a log-ish y scale.
void plot_series_png(const std::string& path, const std::vector<double>& values, int w = 900,
                     int h = 360);

// --- checkpoint container ---------------------------------------------------------

// Versioned binary container: magic + per-parameter records of
// (path string, shape, little-endian float32 payload). The model config is
// serialized alongside as JSON under <path>.json.
void save_checkpoint(const std::string& path, const TCFormer& model);
void load_checkpoint(const std::string& path, TCFormer& model);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// Write the checkpoint plus its config sidecar; load_model reconstructs the
// model from the sidecar and fills in the weights.
void save_model(const std::string& path, const TCFormer& model);
TCFormer load_model(const std::string& path);

}  // namespace tcformer::io
