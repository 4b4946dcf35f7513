#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aidflow/preprocess.hpp"
#include "aidflow/types.hpp"
#include "aidflow/weaklabel.hpp"

namespace aidflow::io {

/// Splits one CSV line on commas (no quoting; none of the formats need it).
std::vector<std::string_view> split_csv_line(std::string_view line);

// detector_id,milepost_km,lane_count,direction
std::string detectors_csv(std::span<const DetectorMeta> detectors);
std::vector<DetectorMeta> parse_detectors_csv(std::string_view text);

// timestamp_iso8601,detector_id,lane,speed_mph,volume_count,occupancy_frac
// Lane rows (lane >= 1) are written when lane data exists, otherwise one
// aggregated row with lane 0. Rows are ordered by time, then detector order.
std::string measurements_csv(std::span<const DetectorMeta> detectors, std::span<const MeasurementSeries> series);
/// One series per detector in `detectors` order. Lane rows are aggregated
/// with preprocess::aggregate_series; empty fields read as NaN.
std::vector<MeasurementSeries> parse_measurements_csv(std::string_view text, std::span<const DetectorMeta> detectors);

// incident_id,pair_id,start_iso8601,duration_s,template,reported_start_iso8601,reported_duration_s
std::string incidents_csv(std::span<const IncidentRecord> incidents);
std::vector<IncidentRecord> parse_incidents_csv(std::string_view text);

// slice_id,pair_id,t_end_iso8601,steps,reported_label,prob_label,true_label,v0,...
// Values are step-major (step 0 channels 0..4, step 1, ...); empty label
// fields mean unknown.
std::string slices_csv(std::span<const TimeSlice> slices);
std::vector<TimeSlice> parse_slices_csv(std::string_view text);

/// Little-endian binary layout: "AIDSLC01", u64 count, then per slice
/// u32 id length, id bytes, i64 t_end, u64 steps, i32 reported_label,
/// u8 has_prob, f64 prob, u8 has_true, i32 true_label, steps*5 f64.
std::string slices_binary(std::span<const TimeSlice> slices);
std::vector<TimeSlice> parse_slices_binary(std::string_view bytes);

enum class SliceFormat { csv, binary };
SliceFormat slice_format_from_string(std::string_view s);
void write_slices(const std::filesystem::path& path, std::span<const TimeSlice> slices, SliceFormat format);
/// Detects the format from the file's leading bytes.
std::vector<TimeSlice> read_slices(const std::filesystem::path& path);

// slice_id,lf_1,...,lf_10,prob_label
std::string label_matrix_csv(const weaklabel::LabelMatrix& matrix, std::span<const TimeSlice> slices);

// pair_id,ref_speed_up,ref_speed_down
std::string references_csv(std::span<const std::pair<std::string, preprocess::References>> refs);
std::vector<std::pair<std::string, preprocess::References>> parse_references_csv(std::string_view text);

}  // namespace aidflow::io
