/** Writer for the feature tensor file format consumed by the decoding
 * toolkit: 4-byte magic "FTF1", little-endian uint32 header length, a JSON
 * header, then the row-major little-endian float32 payload. The file ends
 * exactly at the payload; readers reject trailing bytes. */

import { writeFileSync } from 'node:fs';

export interface FtfHeader {
	rows: number;
	cols: number;
	sampleRateHz: number;
	unit: string;
	source: string;
}

export function encodeFeatureFile(data: Float32Array, h: FtfHeader): Buffer {
	if (data.length !== h.rows * h.cols) {
		throw new Error(`payload has ${data.length} values, header says ${h.rows}x${h.cols}`);
	}
	const header = JSON.stringify({
		dtype: 'f32',
		shape: [h.rows, h.cols],
		sample_rate_hz: h.sampleRateHz,
		unit: h.unit,
		source: h.source,
	});
	const headerBytes = Buffer.from(header, 'utf-8');
	const out = Buffer.alloc(4 + 4 + headerBytes.length + 4 * data.length);
	out.write('FTF1', 0, 'ascii');
	out.writeUInt32LE(headerBytes.length, 4);
	headerBytes.copy(out, 8);
	const payload = new DataView(out.buffer, out.byteOffset + 8 + headerBytes.length);
	for (let i = 0; i < data.length; i++) {
		payload.setFloat32(4 * i, data[i], true);
	}
	return out;
}

export function writeFeatureFile(path: string, data: Float32Array, h: FtfHeader): void {
	writeFileSync(path, encodeFeatureFile(data, h));
}
