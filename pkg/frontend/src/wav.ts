/** Minimal RIFF/WAVE reader: PCM and IEEE-float, any channel count and
 * rate. Decodes to mono float32 and resamples to the model rate. */

import { readFileSync } from 'node:fs';

export const MODEL_SAMPLE_RATE = 16000;

export class WavError extends Error {}

export interface DecodedAudio {
	/** Mono samples in [-1, 1] at `sampleRate`. */
	samples: Float32Array;
	sampleRate: number;
	/** Duration of the original file in seconds. */
	durationS: number;
}

const FORMAT_PCM = 1;
const FORMAT_FLOAT = 3;
const FORMAT_EXTENSIBLE = 0xfffe;

export function readWav(path: string): DecodedAudio {
	let buf: Buffer;
	try {
		buf = readFileSync(path);
	} catch (e) {
		throw new WavError(`cannot read ${path}: ${(e as Error).message}`);
	}
	return decodeWav(buf, path);
}

export function decodeWav(buf: Buffer, label = 'buffer'): DecodedAudio {
	if (buf.length < 12 || buf.toString('ascii', 0, 4) !== 'RIFF' || buf.toString('ascii', 8, 12) !== 'WAVE') {
		throw new WavError(`${label}: not a RIFF/WAVE file`);
	}

	let formatTag = 0;
	let channels = 0;
	let sampleRate = 0;
	let bitsPerSample = 0;
	let data: Buffer | null = null;

	// walk the chunk list; ignore everything except fmt and data
	let pos = 12;
	while (pos + 8 <= buf.length) {
		const id = buf.toString('ascii', pos, pos + 4);
		const size = buf.readUInt32LE(pos + 4);
		const body = pos + 8;
		if (id === 'fmt ') {
			if (size < 16) throw new WavError(`${label}: fmt chunk too short`);
			formatTag = buf.readUInt16LE(body);
			channels = buf.readUInt16LE(body + 2);
			sampleRate = buf.readUInt32LE(body + 4);
			bitsPerSample = buf.readUInt16LE(body + 14);
			if (formatTag === FORMAT_EXTENSIBLE && size >= 40) {
				// first two GUID bytes carry the real format tag
				formatTag = buf.readUInt16LE(body + 24);
			}
		} else if (id === 'data') {
			data = buf.subarray(body, Math.min(body + size, buf.length));
		}
		pos = body + size + (size % 2); // chunks are word aligned
	}

	if (sampleRate === 0) throw new WavError(`${label}: missing fmt chunk`);
	if (data === null) throw new WavError(`${label}: missing data chunk`);
	if (channels < 1) throw new WavError(`${label}: fmt declares ${channels} channels`);
	if (formatTag !== FORMAT_PCM && formatTag !== FORMAT_FLOAT) {
		throw new WavError(`${label}: unsupported WAV format tag ${formatTag}`);
	}

	const mono = decodeSamples(data, formatTag, bitsPerSample, channels, label);
	const durationS = mono.length / sampleRate;
	return { samples: mono, sampleRate, durationS };
}

function decodeSamples(
	data: Buffer,
	formatTag: number,
	bits: number,
	channels: number,
	label: string,
): Float32Array {
	const bytes = bits / 8;
	const frames = Math.floor(data.length / (bytes * channels));
	const out = new Float32Array(frames);

	const read = (off: number): number => {
		if (formatTag === FORMAT_FLOAT) {
			if (bits === 32) return data.readFloatLE(off);
			if (bits === 64) return data.readDoubleLE(off);
			throw new WavError(`${label}: ${bits}-bit float WAV is not supported`);
		}
		switch (bits) {
			case 8:
				return (data.readUInt8(off) - 128) / 128;
			case 16:
				return data.readInt16LE(off) / 32768;
			case 24:
				return ((data.readUIntLE(off, 3) << 8) >> 8) / 8388608;
			case 32:
				return data.readInt32LE(off) / 2147483648;
			default:
				throw new WavError(`${label}: ${bits}-bit PCM is not supported`);
		}
	};

	for (let i = 0; i < frames; i++) {
		let acc = 0;
		for (let c = 0; c < channels; c++) {
			acc += read((i * channels + c) * bytes);
		}
		out[i] = acc / channels;
	}
	return out;
}

/** Windowed-sinc resampler, 32 taps each side, Hann window. Good enough
 * for feature extraction; not meant for mastering. */
export function resampleTo(x: Float32Array, fsIn: number, fsOut: number): Float32Array {
	if (fsIn === fsOut) return x;
	const ratio = fsOut / fsIn;
	const nOut = Math.round(x.length * ratio);
	const out = new Float32Array(nOut);
	const taps = 32;
	const fc = 0.45 * Math.min(1, ratio); // cycles per input sample
	for (let n = 0; n < nOut; n++) {
		const center = n / ratio;
		const j0 = Math.max(0, Math.ceil(center) - taps);
		const j1 = Math.min(x.length - 1, Math.floor(center) + taps);
		let acc = 0;
		for (let j = j0; j <= j1; j++) {
			const u = center - j;
			const sinc = u === 0 ? 1 : Math.sin(2 * Math.PI * fc * u) / (2 * Math.PI * fc * u);
			const hann = 0.5 + 0.5 * Math.cos((Math.PI * u) / taps);
			acc += x[j] * 2 * fc * sinc * hann;
		}
		out[n] = acc;
	}
	return out;
}

/** Decode and bring to the model's 16 kHz mono contract. */
export function loadModelAudio(path: string): DecodedAudio {
	const raw = readWav(path);
	if (raw.sampleRate === MODEL_SAMPLE_RATE) return raw;
	return {
		samples: resampleTo(raw.samples, raw.sampleRate, MODEL_SAMPLE_RATE),
		sampleRate: MODEL_SAMPLE_RATE,
		durationS: raw.durationS,
	};
}
