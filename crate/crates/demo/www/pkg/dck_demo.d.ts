/* tslint:disable */
/* eslint-disable */

export class DemoSession {
    free(): void;
    [Symbol.dispose](): void;
    inspect(sample: number): string;
    constructor(dialogues: number, seed: number);
    samples(): number;
    train(epochs: number): string;
}

export function maskedSoftmax(logits: string, mask: string): string;

export function recallAtK(logits: string, label: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demosession_free: (a: number, b: number) => void;
    readonly demosession_inspect: (a: number, b: number) => [number, number, number, number];
    readonly demosession_new: (a: number, b: number) => [number, number, number];
    readonly demosession_samples: (a: number) => number;
    readonly demosession_train: (a: number, b: number) => [number, number, number, number];
    readonly maskedSoftmax: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly recallAtK: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
