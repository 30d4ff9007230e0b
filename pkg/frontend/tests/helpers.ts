import { writeFileSync } from 'node:fs';

/** 16-bit PCM mono WAV writer for fixtures. */
export function writeWav(
	path: string,
	samples: Float32Array,
	sampleRate: number,
): void {
	const n = samples.length;
	const buf = Buffer.alloc(44 + 2 * n);
	buf.write('RIFF', 0, 'ascii');
	buf.writeUInt32LE(36 + 2 * n, 4);
	buf.write('WAVE', 8, 'ascii');
	buf.write('fmt ', 12, 'ascii');
	buf.writeUInt32LE(16, 16);
	buf.writeUInt16LE(1, 20); // PCM
	buf.writeUInt16LE(1, 22); // mono
	buf.writeUInt32LE(sampleRate, 24);
	buf.writeUInt32LE(sampleRate * 2, 28);
	buf.writeUInt16LE(2, 32);
	buf.writeUInt16LE(16, 34);
	buf.write('data', 36, 'ascii');
	buf.writeUInt32LE(2 * n, 40);
	for (let i = 0; i < n; i++) {
		const v = Math.max(-1, Math.min(1, samples[i]));
		buf.writeInt16LE(Math.round(v * 32767), 44 + 2 * i);
	}
	writeFileSync(path, buf);
}

export function tone(freqHz: number, durationS: number, sampleRate: number, amp = 0.5): Float32Array {
	const n = Math.round(durationS * sampleRate);
	const out = new Float32Array(n);
	for (let i = 0; i < n; i++) {
		out[i] = amp * Math.sin((2 * Math.PI * freqHz * i) / sampleRate);
	}
	return out;
}

export interface ParsedFtf {
	shape: [number, number];
	sampleRateHz: number;
	unit: string;
	source: string;
	data: Float32Array;
}

/** Reader used only to check our own writer in tests. */
export function parseFtf(buf: Buffer): ParsedFtf {
	if (buf.toString('ascii', 0, 4) !== 'FTF1') throw new Error('bad magic');
	const headerLen = buf.readUInt32LE(4);
	const header = JSON.parse(buf.toString('utf-8', 8, 8 + headerLen));
	const [rows, cols] = header.shape;
	const start = 8 + headerLen;
	if (buf.length !== start + 4 * rows * cols) {
		throw new Error(`file is ${buf.length} bytes, expected ${start + 4 * rows * cols}`);
	}
	const data = new Float32Array(rows * cols);
	for (let i = 0; i < data.length; i++) {
		data[i] = buf.readFloatLE(start + 4 * i);
	}
	return {
		shape: [rows, cols],
		sampleRateHz: header.sample_rate_hz,
		unit: header.unit,
		source: header.source,
		data,
	};
}
