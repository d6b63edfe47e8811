// Mirrors of the /api/v1 JSON payloads. Field names match the wire format
// exactly; the console never derives numbers of its own.
export {};
