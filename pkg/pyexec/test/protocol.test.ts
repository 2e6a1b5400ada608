import { describe, expect, it } from "vitest";
import { helloLine, parseRequest, RequestParseError } from "../src/protocol.js";

describe("request parsing", () => {
  it("accepts a full request and defaults the timeout", () => {
    const request = parseRequest('{"id": "a", "source": "def f(x): pass", "args_literal": "1"}');
    expect(request.timeout_ms).toBe(5000);
    expect(request.id).toBe("a");
  });

  it("rejects non-JSON, non-objects, and missing fields", () => {
    expect(() => parseRequest("nope")).toThrow(RequestParseError);
    expect(() => parseRequest("[1, 2]")).toThrow(RequestParseError);
    expect(() => parseRequest('{"id": "a"}')).toThrow(RequestParseError);
    expect(() => parseRequest('{"id": 5, "source": "s", "args_literal": "1"}')).toThrow(
      RequestParseError,
    );
  });

  it("bounds the timeout", () => {
    expect(() =>
      parseRequest('{"id": "a", "source": "s", "args_literal": "1", "timeout_ms": 0}'),
    ).toThrow(RequestParseError);
    expect(() =>
      parseRequest('{"id": "a", "source": "s", "args_literal": "1", "timeout_ms": 600000}'),
    ).toThrow(RequestParseError);
  });

  it("announces the protocol version in the hello line", () => {
    const hello = JSON.parse(helloLine());
    expect(hello.type).toBe("hello");
    expect(hello.protocol).toBe(1);
  });
});
